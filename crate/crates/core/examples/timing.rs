use std::time::Instant;

use fusereg::data::{make_synthetic, PairSampler};
use fusereg::graph::optim::Adam;
use fusereg::graph::{Tape, Tensor};
use fusereg::losses::{op_total_loss, LossWeights};
use fusereg::metrics::ndv;
use fusereg::network::{self, ModelConfig};
use fusereg::volgrid::Volume;

fn vol_tensor(v: &Volume<f32>) -> Tensor<f32> {
    Tensor::new(vec![1, v.shape[0], v.shape[1], v.shape[2]], v.values.clone())
}

fn main() {
    let shape = [32usize, 48, 32];
    let cases: Vec<_> = (0..16u64).map(|i| make_synthetic::<f32>(shape, 3.0, 5.0, 424242 + i).unwrap()).collect();
    let held: Vec<_> = (16..20u64).map(|i| make_synthetic::<f32>(shape, 3.0, 5.0, 424242 + i).unwrap()).collect();
    // pool of 32 independent volumes, randomly paired per epoch
    let mut pool: Vec<&Volume<f32>> = Vec::new();
    for c in &cases { pool.push(&c.moving); pool.push(&c.fixed); }

    let config = ModelConfig::slim();
    let mut weights = network::ModelWeights::<f32>::init(&config, 7);
    let loss_w = LossWeights { ncc_window: 9, ..LossWeights::default() };
    let mut adam = Adam::new(1e-3);
    let mut sampler = PairSampler::new(8);
    let mut queue: Vec<(usize, usize)> = Vec::new();
    let t0 = Instant::now();
    let mut avg_loss = 0.0f64;
    for it in 1..=500usize {
        if queue.is_empty() {
            queue = sampler.epoch_pairs(pool.len()).unwrap();
        }
        let (a, b) = queue.pop().unwrap();
        let mut tape = Tape::new(true);
        let params = weights.map(|t| tape.param(t.clone()));
        let m = tape.constant(vol_tensor(pool[a]));
        let f = tape.constant(vol_tensor(pool[b]));
        let regn = network::register_on_tape(&mut tape, &params, &config, m, f);
        let loss = op_total_loss(&mut tape, f, m, regn.phi, regn.phi_hat, &loss_w);
        let bd = loss.breakdown(&tape);
        avg_loss += bd.total;
        let mut grads = tape.backward(loss.total);
        let ids = params.flat();
        let tensors = weights.flat();
        let g: Vec<Tensor<f32>> = ids.iter().zip(&tensors).map(|(id, t)| grads.take(**id, t)).collect();
        adam.step(&mut weights.flat_mut(), &g);
        if it % 125 == 0 {
            let (mut epe, mut nv) = (0.0f64, 0.0f64);
            for case in &held {
                let out = network::register(&config, &weights, &case.moving, &case.fixed).unwrap();
                let (mut acc, mut n) = (0.0f64, 0usize);
                for i0 in 2..shape[0]-2 { for i1 in 2..shape[1]-2 { for i2 in 2..shape[2]-2 {
                    let p = out.phi.at(i0, i1, i2);
                    let t = case.true_field.at(i0, i1, i2);
                    acc += ((p[0] as f64 - t[0] as f64).powi(2) + (p[1] as f64 - t[1] as f64).powi(2) + (p[2] as f64 - t[2] as f64).powi(2)).sqrt();
                    n += 1;
                }}}
                epe += acc / n as f64;
                nv += ndv(&out.phi);
            }
            println!("pool iter {it}: train loss {:+.4} | held EPE {:.3} NDV {:.4}% | {:.0?}",
                avg_loss / 125.0, epe/4.0, nv/4.0, t0.elapsed());
            avg_loss = 0.0;
        }
    }
}
