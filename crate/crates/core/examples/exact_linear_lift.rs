//! On a linear plant the identity dictionary is invariant, so the fitted surrogate
//! reproduces the zero-order-hold discretization.

use nalgebra::{DMatrix, DVector};
use safedmd_mpc::dictionary::Dictionary;
use safedmd_mpc::dynamics::{ControlAffinePlant, SampledDynamics};
use safedmd_mpc::safedmd::{fit, sample_data, InputTag};
use safedmd_mpc::sets::BoxSet;

fn main() -> safedmd_mpc::Result<()> {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.2]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let dt = 0.01;
    let sd = SampledDynamics::with_default_substeps(ControlAffinePlant::linear(a.clone(), b.clone())?, dt)?;
    let dict = Dictionary::identity(2)?;
    let x_box = BoxSet::symmetric(2, 5.0);

    let zero = sample_data(&sd, &dict, &x_box, InputTag::Zero, 200, 0)?;
    let unit = sample_data(&sd, &dict, &x_box, InputTag::Unit(1), 200, 0)?;
    let model = fit(&zero, &[unit])?;

    // exp([[A, B], [0, 0]] dt) holds (A_d, B_d) in its top block row
    let mut aug = DMatrix::zeros(3, 3);
    aug.view_mut((0, 0), (2, 2)).copy_from(&(&a * dt));
    aug.view_mut((0, 2), (2, 1)).copy_from(&(&b * dt));
    let e = aug.exp();
    let ad = e.view((0, 0), (2, 2)).into_owned();
    let bd = e.view((0, 2), (2, 1)).into_owned();

    println!("fitted A =\n{}exact A_d =\n{}", model.a, ad);
    println!("|A - A_d| = {:.3e}", (&model.a - &ad).norm());
    println!("|b - B_d| = {:.3e}", (&model.b[0] - &bd).norm());

    let x0 = DVector::from_vec(vec![1.0, -0.5]);
    let inputs: Vec<DVector<f64>> = (0..50).map(|k| DVector::from_element(1, (k as f64 * 0.2).sin())).collect();
    let pred = model.predict_k(&dict, &x0, &inputs)?;
    let mut x = x0;
    for u in &inputs {
        x = sd.flow(&x, u)?;
    }
    println!("50-step prediction error {:.3e}", (pred.states.last().unwrap() - x).norm());
    Ok(())
}
