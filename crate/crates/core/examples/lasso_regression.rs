//! Sparse regression by coordinate descent: which of eight noisy predictors
//! actually drive the response, and how λ changes the answer.

use calad::dataio::Matrix;
use calad::relevance::{estimate_relevance, lasso_fit, RegressionProblem};
use calad::tensor::Prng;

fn main() -> calad::Result<()> {
    let (n, c) = (400, 8);
    let mut rng = Prng::new(7);
    let x = Matrix::new(n, c, (0..n * c).map(|_| rng.normal()).collect())?;
    let y: Vec<f64> = (0..n).map(|t| 2.0 * x.get(t, 1) - 1.0 * x.get(t, 4) + 0.3 * rng.normal()).collect();

    let problem = RegressionProblem::new(&x, &y)?;
    for lambda in [0.0, 0.001, 0.05, 0.5, 3.0] {
        let fit = lasso_fit(&problem, lambda)?;
        let beta: Vec<String> = fit.beta.iter().map(|b| format!("{b:+.3}")).collect();
        println!("λ = {lambda:<5} sweeps {:>4}  β = [{}]", fit.sweeps, beta.join(" "));
    }

    let rel = estimate_relevance(&y, &x, 0.05)?;
    println!("relevant channels at λ = 0.05: {:?} ({:?})", rel.relevant(), rel.selection);
    Ok(())
}
