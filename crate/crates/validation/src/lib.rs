//! Holds the `acceptance` test target. Run it with
//! `cargo test -p dualmhe-validation --test acceptance`; pass criterion ids
//! (`C1` … `C11`) as arguments to run a subset.
