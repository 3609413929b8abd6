//! A hand-written dictionary: observables must vanish at the origin and the lift keeps the
//! state coordinates first.

use std::sync::Arc;

use nalgebra::DVector;
use safedmd_mpc::dictionary::{Dictionary, Observable};
use safedmd_mpc::sets::BoxSet;

fn main() -> safedmd_mpc::Result<()> {
    let product = Observable::new("x1*x2", Arc::new(|x: &DVector<f64>| x[0] * x[1])).with_gradient(Arc::new(
        |x: &DVector<f64>| DVector::from_vec(vec![x[1], x[0]]),
    ));
    let cubic = Observable::new("x1^3", Arc::new(|x: &DVector<f64>| x[0].powi(3)));
    let dict = Dictionary::new("poly", 2, vec![product, cubic])?;

    let x = DVector::from_vec(vec![0.5, -2.0]);
    let lifted = dict.lift(&x)?;
    println!("Phi({:?}) = {:?}", x.as_slice(), lifted.z.as_slice());
    println!("jacobian of the lift:\n{}", dict.jacobian_hat(&x));

    let x_box = BoxSet::symmetric(2, 1.0);
    println!("L_Phi on [-1, 1]^2: {:.4}", dict.estimate_l_phi(&x_box, 101)?);

    let shifted = Observable::new("1 + x1", Arc::new(|x: &DVector<f64>| 1.0 + x[0]));
    match Dictionary::new("bad", 2, vec![shifted]) {
        Ok(_) => println!("unexpected: accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
