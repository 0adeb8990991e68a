//! Window-level precision, recall, F1 and step-wise AU-PR, with the random
//! baseline for comparison.

use calad::detection::{compute_metrics, random_baseline};

fn main() -> calad::Result<()> {
    let truth: Vec<u8> = (0..1000).map(|i| u8::from(i % 7 == 0 || (300..360).contains(&i))).collect();
    // A detector that is informative but noisy.
    let scores: Vec<f64> = truth
        .iter()
        .enumerate()
        .map(|(i, &t)| (0.35 * f64::from(t) + 0.65 * ((i * 7919) % 1000) as f64 / 1000.0).min(1.0))
        .collect();
    let pred: Vec<u8> = scores.iter().map(|&s| u8::from(s > 0.6)).collect();
    let prevalence = truth.iter().map(|&t| f64::from(t)).sum::<f64>() / truth.len() as f64;

    let m = compute_metrics(&truth, &pred, &scores)?;
    let (r, _) = random_baseline(&truth, 0)?;
    println!("prevalence {prevalence:.3}");
    println!("detector  P {:.3} R {:.3} F1 {:.3} AU-PR {:.3}", m.precision, m.recall, m.f1, m.au_pr);
    println!("random    P {:.3} R {:.3} F1 {:.3} AU-PR {:.3}", r.precision, r.recall, r.f1, r.au_pr);

    let constant = compute_metrics(&truth, &vec![0; truth.len()], &vec![0.5; truth.len()])?;
    println!("constant scores give AU-PR {:.3} (= prevalence)", constant.au_pr);
    Ok(())
}
