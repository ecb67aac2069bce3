//! BLSTM over a short sequence, and the reversal symmetry of tied weights.

use cldnn::recurrent::{blstm_forward, BlstmParams, LstmParams};
use ndarray::{s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cldnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Array2::from_shape_fn((6, 4), |(t, d)| ((t * 4 + d) as f64).cos());

    let p = BlstmParams::init(4, 3, &mut rng);
    let z = blstm_forward(&x, &p)?;
    println!("input {:?} -> output {:?}", x.dim(), z.dim());

    let lstm = LstmParams::init(4, 3, &mut rng);
    let tied = BlstmParams {
        fwd: lstm.clone(),
        bwd: lstm,
    };
    let m = blstm_forward(&x, &tied)?.mean_axis(Axis(0)).unwrap();
    let rev = x.slice(s![..;-1, ..]).to_owned();
    let mr = blstm_forward(&rev, &tied)?.mean_axis(Axis(0)).unwrap();
    println!("mean output          {:.4}", m);
    println!("mean output reversed {:.4}", mr);
    Ok(())
}
