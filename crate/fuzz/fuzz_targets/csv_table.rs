#![no_main]

use libfuzzer_sys::fuzz_target;
use qnoise_cli::table::Table;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(table) = Table::parse_csv(text) {
        // anything accepted must survive a write/read cycle
        let csv = String::from_utf8(table.to_csv().unwrap()).unwrap();
        let again = Table::parse_csv(&csv).unwrap();
        assert_eq!(again.columns, table.columns);
        assert_eq!(again.rows.len(), table.rows.len());
    }
});
