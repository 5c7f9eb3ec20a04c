// Scratch harness for tuning dataset/zoo constants; not part of the build.
use std::time::Instant;
use transferbench_core::zoo::dataset::generate_with_geometry;
use transferbench_core::zoo::{train_model, Activation, ArchSpec, Model};

fn main() {
    for (width, sigma) in [(0.30, 0.115), (0.30, 0.13), (0.26, 0.115)] {
        let (lo, hi) = (0.5 - width / 2.0, 0.5 + width / 2.0);
        println!("== width={width} sigma={sigma}");
        let data = generate_with_geometry(20, 900, 560, 5, 64, lo, hi, sigma, 0.15).unwrap();
        let specs: Vec<(&str, &str, Vec<usize>, Activation, f64, f64, usize, f64)> = vec![
            ("lin-a", "linear", vec![], Activation::Identity, 0.0, 0.4, 1200, 0.70),
            ("lin-b-sm", "linear", vec![], Activation::Identity, 0.1, 0.4, 1200, 0.62),
            ("tanh-d1", "mlp-tanh", vec![24], Activation::Tanh, 0.0, 0.4, 1500, 0.80),
            ("tanh-d2", "mlp-tanh", vec![24, 24], Activation::Tanh, 0.0, 0.4, 1500, 0.75),
            ("tanh-d1-sm", "mlp-tanh", vec![24], Activation::Tanh, 0.1, 0.4, 1500, 0.72),
            ("tanh-d2-sm", "mlp-tanh", vec![24, 24], Activation::Tanh, 0.1, 0.4, 1500, 0.78),
            ("relu-w16", "mlp-relu", vec![16], Activation::Relu, 0.0, 0.35, 1500, 0.60),
            ("relu-w32", "mlp-relu", vec![32], Activation::Relu, 0.0, 0.35, 1500, 0.65),
            ("relu-w16-sm", "mlp-relu", vec![16], Activation::Relu, 0.1, 0.35, 1500, 0.55),
            ("relu-w32-sm", "mlp-relu", vec![32], Activation::Relu, 0.1, 0.35, 1500, 0.62),
            ("wide-a", "wide", vec![96], Activation::Tanh, 0.0, 0.4, 1200, 0.88),
            ("wide-a-sm", "wide", vec![96], Activation::Tanh, 0.1, 0.4, 1200, 0.82),
        ];
        let t0 = Instant::now();
        let mut models: Vec<Model> = Vec::new();
        for (id, fam, hidden, act, ls, lr, epochs, frac) in specs {
            let a = ArchSpec {
                hidden,
                activation: act,
                label_smoothing: ls,
                train_fraction: frac,
                learning_rate: lr,
                epochs,
            };
            let seed = 1000 + id.bytes().map(|b| b as u64).sum::<u64>();
            match train_model(id, fam, &a, &data, seed, 0.0) {
                Ok(m) => {
                    print!(" {id}={:.3}", m.eval_accuracy);
                    models.push(m);
                }
                Err(e) => print!(" {id}=ERR({e})"),
            }
        }
        println!("\n  trained in {:.1}s", t0.elapsed().as_secs_f64());

        let mut same = (0.0, 0usize);
        let mut cross = (0.0, 0usize);
        for i in 0..models.len() {
            for j in i + 1..models.len() {
                let mut agree = 0usize;
                for s in &data.eval {
                    if models[i].decide(&s.x).unwrap() == models[j].decide(&s.x).unwrap() {
                        agree += 1;
                    }
                }
                let frac = agree as f64 / data.eval.len() as f64;
                if models[i].family == models[j].family {
                    same = (same.0 + frac, same.1 + 1);
                } else {
                    cross = (cross.0 + frac, cross.1 + 1);
                }
            }
        }
        let all_correct = data
            .eval
            .iter()
            .filter(|s| models.iter().all(|m| m.decide(&s.x).unwrap() == s.y))
            .count();
        println!(
            "  same-family agreement {:.4}  cross-family {:.4}  correct-by-all {}/{}",
            same.0 / same.1 as f64,
            cross.0 / cross.1 as f64,
            all_correct,
            data.eval.len()
        );
    }
}
