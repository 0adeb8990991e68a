//! Load an entity from CSV files, normalise it with training statistics and
//! slice it into labelled windows. Without arguments a small entity is
//! written to a temporary directory first.
//!
//! cargo run --release --example csv_ingest -- [train.csv test.csv labels.csv]

use std::path::PathBuf;

use calad::dataio::{load_csv, make_windows, normalize};

fn main() -> calad::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = std::env::temp_dir().join(format!("calad_csv_ingest_{}", std::process::id()));
    let (train, test, labels) = if args.len() == 3 {
        (PathBuf::from(&args[0]), PathBuf::from(&args[1]), PathBuf::from(&args[2]))
    } else {
        std::fs::create_dir_all(&dir)?;
        let rows = |n: usize, shift: f64| -> String {
            let mut s = String::from("pressure,temperature,flow\n");
            for t in 0..n {
                let x = t as f64 * 0.2;
                s.push_str(&format!("{},{},{}\n", x.sin() + shift, 20.0 + x.cos(), 5.0 + 0.1 * x.sin()));
            }
            s
        };
        std::fs::write(dir.join("train.csv"), rows(120, 0.0))?;
        std::fs::write(dir.join("test.csv"), rows(80, 0.5))?;
        let lab: String = (0..80).map(|t| if (40..48).contains(&t) { "1\n" } else { "0\n" }).collect();
        std::fs::write(dir.join("labels.csv"), lab)?;
        (dir.join("train.csv"), dir.join("test.csv"), dir.join("labels.csv"))
    };

    let set = load_csv(&train, &test, &labels, "csv-entity")?;
    println!("channels: {:?}", set.channel_names);
    let (norm, stats) = normalize(&set)?;
    println!("train means {:?}", stats.mean);
    let windows = make_windows(&norm.test, Some(&norm.test_labels), 16, 4)?;
    let flagged = windows.labels.as_ref().map_or(0, |l| l.iter().filter(|&&v| v == 1).count());
    println!("{} test windows of 16 steps, {flagged} contain an anomalous point", windows.len());

    // Malformed input is rejected with the offending line.
    std::fs::create_dir_all(&dir)?;
    let bad = dir.join("bad.csv");
    std::fs::write(&bad, "a,b\n1,2\n3\n")?;
    if let Err(e) = load_csv(&bad, &test, &labels, "bad") {
        println!("rejected: {e} (exit code {})", e.exit_code());
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
