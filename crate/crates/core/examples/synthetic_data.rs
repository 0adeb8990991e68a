//! Generate a seeded synthetic entity with planted anomalies and write it as CSV.
//!
//! cargo run --release --example synthetic_data -- [seed] [out_dir]

use calad::dataio::{generate_synthetic, write_labels, write_matrix_csv, SyntheticSpec};

fn main() -> calad::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed must be an integer"));
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "synthetic_out".into()));

    let mut spec = SyntheticSpec::bench(seed, 3000, 2000, 6, vec![0, 1]);
    spec.shift = true;
    let set = generate_synthetic(&spec)?;

    let anomalous = set.test_labels.iter().filter(|&&l| l == 1).count();
    println!("entity {}: {} channels, relevant {:?}", set.entity_id, set.channels(), set.relevant_channels);
    println!("train {} steps, test {} steps, {anomalous} anomalous test points", set.train.rows, set.test.rows);
    for &(start, len) in &spec.anomaly_segments {
        println!("  segment [{start}, {})", start + len);
    }

    write_matrix_csv(&out.join("train.csv"), &set.train, &set.channel_names)?;
    write_matrix_csv(&out.join("test.csv"), &set.test, &set.channel_names)?;
    write_labels(&out.join("labels.csv"), &set.test_labels)?;
    println!("wrote {}", out.display());
    Ok(())
}
