#![no_main]

use dmliv_harness::report::{read_rows, write_rows};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_rows(data) {
        let mut first = Vec::new();
        write_rows(&rows, &mut first).expect("rows write back");
        let again = read_rows(first.as_slice()).expect("written rows parse");
        let mut second = Vec::new();
        write_rows(&again, &mut second).unwrap();
        assert_eq!(first, second);
    }
});
