//! Holds the `acceptance` test target. Run it with
//! `cargo test -p refsep-criteria --test acceptance`; it prints one
//! PASS/FAIL line per criterion and fails if any criterion fails.
