//! Reverse-mode gradients on a tiny logistic model, checked against a
//! central difference.

use relconv::{Tape, Tensor};

fn loss_of(w: &Tensor, x: &Tensor, labels: &[usize]) -> relconv::Result<(f64, Option<Tensor>)> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.param(w.clone());
    let logits = tape.matmul(xv, wv)?;
    let hidden = tape.tanh(logits)?;
    let loss = tape.softmax_cross_entropy(hidden, labels)?;
    let value = tape.value(loss).data()[0];
    tape.backward(loss)?;
    Ok((value, tape.grad(wv).cloned()))
}

fn main() -> relconv::Result<()> {
    let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.3], vec![0.7, -1.2]])?;
    let w = Tensor::from_rows(&[vec![0.1, -0.4, 0.2], vec![0.3, 0.5, -0.1]])?;
    let labels = [2, 0, 1];

    let (loss, grad) = loss_of(&w, &x, &labels)?;
    let grad = grad.expect("w is a parameter");
    println!("loss {loss:.6}");
    let h = 1e-5;
    for i in 0..w.len() {
        let (mut plus, mut minus) = (w.clone(), w.clone());
        plus.data_mut()[i] += h;
        minus.data_mut()[i] -= h;
        let numeric =
            (loss_of(&plus, &x, &labels)?.0 - loss_of(&minus, &x, &labels)?.0) / (2.0 * h);
        println!(
            "dL/dw[{i}] autodiff {:+.9} numeric {numeric:+.9}",
            grad.data()[i]
        );
    }
    Ok(())
}
