//! Finite-difference check of a gated attention block against reverse-mode
//! gradients, inputs and parameters together.

use burstkit::align::Mkga;
use burstkit::params::{Bound, ParamBuilder};
use burstkit::tensor::gradcheck::{check_gradients, GradCheck};
use burstkit::tensor::{Tensor, TensorError};

fn main() -> burstkit::Result<()> {
    let mut pb = ParamBuilder::new(1);
    let block = Mkga::new(&mut pb, "mkga", 4, 2)?;
    let store = pb.finish();

    let mut inputs = vec![Tensor::from_fn([2, 4, 6, 6], |n, c, y, x| ((n * 7 + c * 5 + y * 3 + x) as f64 * 0.37).sin())];
    let names = store.names().to_vec();
    for (k, t) in store.values().iter().enumerate() {
        inputs.push(t.map(|v| v + 0.1 * ((k + 1) as f64).sin()));
    }
    let report = check_gradients(
        |_, v| {
            let p = Bound::from_vars(v[1..].to_vec());
            let y = block.forward(&p, v[0]).map_err(|e| TensorError::Contract(e.to_string()))?;
            y.mul(y)?.sum()
        },
        &inputs,
        GradCheck::default(),
    )?;
    println!("input: relative error {:.2e}", report.rel_err[0]);
    for (name, err) in names.iter().zip(&report.rel_err[1..]) {
        println!("{name}: relative error {err:.2e}");
    }
    println!("worst {:.2e}", report.max_rel_err());
    Ok(())
}
