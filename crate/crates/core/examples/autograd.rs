//! The tape: build a small computation, back-propagate, and confirm the
//! gradients against central finite differences.

use calad::tensor::gradcheck::check_parameters;
use calad::tensor::{Linear, ParamStore, Tape, Tensor};

fn main() -> calad::Result<()> {
    let mut tape = Tape::new();
    let w = tape.param(&Tensor::new(&[2, 2], vec![0.5, -1.0, 2.0, 0.25])?);
    let x = tape.constant(&[1, 2], vec![1.0, 3.0])?;
    let y = tape.matmul(x, w)?;
    let p = tape.softmax(y)?;
    let l = tape.ln(p)?;
    let total = tape.sum(l);
    let loss = tape.scale(total, -1.0);
    println!("loss {:.6}", tape.scalar(loss));
    let grads = tape.backward(loss)?;
    println!("d loss / d w = {:?}", grads.get(w).expect("gradient"));

    let mut store = ParamStore::new(4);
    let a = Linear::new(&mut store, "a", 3, 5);
    let b = Linear::new(&mut store, "b", 5, 1);
    let input = Tensor::new(&[6, 3], (0..18).map(|i| (i as f64 * 0.7).cos()).collect())?;
    let report = check_parameters(&store, 1e-5, |tape, p| {
        let x = tape.leaf(&input);
        let h = a.forward(tape, p, x)?;
        let h = tape.relu(h);
        let o = b.forward(tape, p, h)?;
        let sq = tape.mul(o, o)?;
        Ok(tape.mean(sq))
    })?;
    for c in &report {
        println!("{:<10} {:>3} entries, relative error {:.2e}", c.name, c.entries, c.rel_error);
    }
    Ok(())
}
