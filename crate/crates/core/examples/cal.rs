// Temporary calibration scratchpad (not shipped).
use advkit::attack::{bim, iam, AttackConfig, Method};
use advkit::harness::generate_corpus;
use advkit::jpeg::{jpeg_roundtrip, tables_for_qf};
use advkit::model::{calibrate_threshold, loss, ToyConvModel};

fn main() {
    let surrogate = ToyConvModel::new(1);
    let victim = ToyConvModel::new(2);
    let corpus = generate_corpus(30, 64, 42).unwrap();
    let thr_s = calibrate_threshold(&surrogate, &corpus.pairs, 0.01).unwrap();
    let thr_v = calibrate_threshold(&victim, &corpus.pairs, 0.01).unwrap();
    println!("thr surrogate {:.5}  victim {:.5}", thr_s.threshold, thr_v.threshold);

    let mut neg_s: Vec<f64> = corpus
        .pairs
        .iter()
        .map(|(a, b)| loss(&surrogate, a, b).unwrap())
        .collect();
    neg_s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!(
        "surrogate negative distances: min {:.4} med {:.4} max {:.4}",
        neg_s[0],
        neg_s[neg_s.len() / 2],
        neg_s[neg_s.len() - 1]
    );

    let cfg = AttackConfig::default();
    let profile = tables_for_qf(25).unwrap();
    println!("pair | start_s  bim_s  iam_s | start_v  bim_v  iam_v  bimj_v  iamj_v");
    for (i, (xs, xt)) in corpus.pairs.iter().take(12).enumerate() {
        let (adv_b, _) = bim(&surrogate, xs, xt, &cfg).unwrap();
        let (adv_i, _) = iam(&surrogate, xs, xt, &cfg, Method::Bim).unwrap();
        let jb = jpeg_roundtrip(&adv_b, &profile).unwrap();
        let ji = jpeg_roundtrip(&adv_i, &profile).unwrap();
        println!(
            "{i:4} | {:.4} {:.4} {:.4} | {:.4} {:.4} {:.4} {:.4} {:.4}",
            loss(&surrogate, xs, xt).unwrap(),
            loss(&surrogate, &adv_b, xt).unwrap(),
            loss(&surrogate, &adv_i, xt).unwrap(),
            loss(&victim, xs, xt).unwrap(),
            loss(&victim, &adv_b, xt).unwrap(),
            loss(&victim, &adv_i, xt).unwrap(),
            loss(&victim, &jb, xt).unwrap(),
            loss(&victim, &ji, xt).unwrap(),
        );
    }
}
