//! The checked-in fuzz seeds must go through the same entry points without
//! panicking, and the well-formed ones must parse.

use std::path::PathBuf;

use qnoise::hilbert::Operator;
use qnoise::junction::JunctionConfig;
use qnoise::kernel::MemoryKernel;
use qnoise_cli::table::Table;
use qnoise_cli::RunConfig;

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<(String, String)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read_to_string(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn operator_seeds() {
    for (name, text) in seeds("operator_json") {
        let op: Operator = serde_json::from_str(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(op.is_hermitian(), name != "not_hermitian", "{name}");
    }
}

#[test]
fn kernel_seeds() {
    for (name, text) in seeds("kernel_json") {
        let k: MemoryKernel = serde_json::from_str(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let round: MemoryKernel = serde_json::from_str(&serde_json::to_string(&k).unwrap()).unwrap();
        assert_eq!(round, k, "{name}");
    }
}

#[test]
fn junction_seeds() {
    for (name, text) in seeds("junction_json") {
        let cfg: JunctionConfig = serde_json::from_str(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        cfg.validate().unwrap();
    }
}

#[test]
fn run_config_seeds() {
    for (name, text) in seeds("run_config") {
        RunConfig::from_json(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn csv_seeds() {
    for (name, text) in seeds("csv_table") {
        let table = Table::parse_csv(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let again = Table::parse_csv(&String::from_utf8(table.to_csv().unwrap()).unwrap()).unwrap();
        assert_eq!(again, table, "{name}");
    }
}
