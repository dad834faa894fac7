//! Rebuilds the committed replay cache under tests/fixtures/wd-cache.
//!
//!     cargo run -p gazetteer-core --example record_fixture_cache [DIR]

#[path = "../tests/support/fake_wikidata.rs"]
mod fake_wikidata;

use std::path::PathBuf;

fn main() {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| fake_wikidata::fixtures_dir().join("wd-cache"));
    if dir.exists() {
        for entry in std::fs::read_dir(&dir).expect("reading cache dir") {
            let path = entry.expect("reading cache dir").path();
            if path.extension().is_some_and(|e| e == "json") {
                std::fs::remove_file(&path).expect("removing stale cache file");
            }
        }
    }
    match fake_wikidata::record_cache(&dir) {
        Ok(summaries) => {
            for s in summaries {
                println!("{}", serde_json::to_string(&s).unwrap());
            }
            println!("cache written to {}", dir.display());
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
