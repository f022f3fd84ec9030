use rand::Rng as _;

use super::*;
use crate::rng::substream;

fn lv(bits: &[u8]) -> LabelVector {
    LabelVector::new(bits.to_vec()).unwrap()
}

fn rows(m: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&m.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn loss_value(m: &Tensor, labels: &[LabelVector], w: Weighting) -> f64 {
    let mut tape = Tape::new();
    let v = tape.constant(m.clone()).unwrap();
    let l = weighted_bce(&mut tape, v, labels, w).unwrap();
    tape.value(l).item().unwrap()
}

#[test]
fn weighted_bce_formula_value() {
    let v = loss_value(&rows(&[&[0.8, 0.3]]), &[lv(&[1, 0])], Weighting::Pooled);
    assert!((v - 1.1596369905058843).abs() < 1e-12, "{v}");
}

#[test]
fn balanced_batch_doubles_plain_bce() {
    let m = rows(&[&[0.7, 0.2], &[0.4, 0.9]]);
    let labels = [lv(&[1, 0]), lv(&[0, 1])];
    let v = loss_value(&m, &labels, Weighting::Pooled);
    assert!((v - 2.0 * nll(&m, &labels).unwrap()).abs() < 1e-12);
}

#[test]
fn perfect_prediction_loss_is_near_zero() {
    let m = rows(&[&[1.0, 0.0, 1.0]]);
    let v = loss_value(&m, &[lv(&[1, 0, 1])], Weighting::Pooled);
    assert!(v.abs() < 1e-10 && v >= 0.0, "{v}");
}

#[test]
fn one_class_batch_falls_back_to_unit_weights() {
    let m = rows(&[&[0.3, 0.6]]);
    let labels = [lv(&[0, 0])];
    let v = loss_value(&m, &labels, Weighting::Pooled);
    assert_eq!(v, nll(&m, &labels).unwrap());
}

#[test]
fn per_class_weights_balance_each_column() {
    let labels = [lv(&[1, 0]), lv(&[0, 0]), lv(&[0, 1]), lv(&[0, 0])];
    let (wp, wn) = bce_weights(&labels, Weighting::PerClass).unwrap();
    assert_eq!(wp.at2(0, 0), 4.0);
    assert_eq!(wn.at2(1, 0), 4.0 / 3.0);
    assert_eq!(wp.at2(2, 1), 4.0);
}

#[test]
fn uniform_nll_is_t_ln2() {
    let t = 14;
    let m = Tensor::full(vec![3, t], 0.5);
    let labels = vec![LabelVector::zeros(t), LabelVector::from_bools((0..t).map(|i| i % 3 == 0)), LabelVector::zeros(t)];
    let v = nll(&m, &labels).unwrap();
    assert!((v - 9.704060527839234).abs() < 1e-12);
}

#[test]
fn nll_equals_unweighted_bce() {
    let mut rng = substream(3, "test");
    let m = Tensor::new(vec![6, 4], (0..24).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap();
    let labels: Vec<_> = (0..6).map(|_| LabelVector::from_bools((0..4).map(|_| rng.random_bool(0.5)))).collect();
    // all-ones weights reduce the weighted loss to plain BCE
    let mut tape = Tape::new();
    let mv = tape.constant(m.clone()).unwrap();
    let mc = tape.clamp(mv, PROB_CLAMP, 1.0 - PROB_CLAMP).unwrap();
    let y = tape.constant(labels_to_tensor(&labels).unwrap()).unwrap();
    let lm = tape.log(mc).unwrap();
    let nm = tape.one_minus(mc).unwrap();
    let lnm = tape.log(nm).unwrap();
    let ny = tape.one_minus(y).unwrap();
    let a = tape.mul(y, lm).unwrap();
    let b = tape.mul(ny, lnm).unwrap();
    let s = tape.add(a, b).unwrap();
    let s = tape.sum(s).unwrap();
    let bce = -tape.value(s).item().unwrap() / 6.0;
    assert!((bce - nll(&m, &labels).unwrap()).abs() < 1e-12);
}

#[test]
fn auc_examples() {
    assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
    assert_eq!(auc(&[0.3; 4], &[true, false, true, false]).unwrap(), 0.5);
    assert_eq!(auc(&[0.8, 0.4, 0.6, 0.2], &[true, false, false, true]).unwrap(), 0.5);
    assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
}

#[test]
fn auc_properties() {
    let mut rng = substream(5, "test");
    for _ in 0..50 {
        let n = rng.random_range(2..30);
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..6) as f64) / 5.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let a = auc(&scores, &labels).unwrap();
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        assert!((a + auc(&scores, &flipped).unwrap() - 1.0).abs() < 1e-12);
        let cubed: Vec<f64> = scores.iter().map(|s| s * s * s + 2.0).collect();
        assert_eq!(a, auc(&cubed, &labels).unwrap());
    }
}

#[test]
fn dice_examples() {
    let labels = [lv(&[1, 0, 1])];
    assert_eq!(dice(&rows(&[&[1.0, 0.0, 1.0]]), &labels).unwrap(), 1.0);
    let v = dice(&rows(&[&[0.5, 0.5]]), &[lv(&[1, 0])]).unwrap();
    assert!((v - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(dice(&rows(&[&[0.0, 0.0]]), &[lv(&[0, 0])]).unwrap(), 1.0);
}

#[test]
fn dice_is_symmetric_for_binary_inputs() {
    let mut rng = substream(6, "test");
    for _ in 0..100 {
        let a: Vec<bool> = (0..5).map(|_| rng.random_bool(0.5)).collect();
        let b: Vec<bool> = (0..5).map(|_| rng.random_bool(0.5)).collect();
        let as_m = |v: &[bool]| Tensor::new(vec![1, 5], v.iter().map(|x| f64::from(u8::from(*x))).collect()).unwrap();
        let ab = dice(&as_m(&a), &[LabelVector::from_bools(b.clone())]).unwrap();
        let ba = dice(&as_m(&b), &[LabelVector::from_bools(a)]).unwrap();
        assert_eq!(ab, ba);
    }
}

#[test]
fn pess_and_pcss_examples() {
    let labels = [lv(&[1, 0, 1, 0])];
    let perfect = rows(&[&[0.9, 0.1, 0.8, 0.0]]);
    assert_eq!(pess(&perfect, &labels, THRESHOLD).unwrap(), 1.0);
    assert_eq!(pcss(&perfect, &labels, THRESHOLD).unwrap(), 1.0);
    assert_eq!(pess(&Tensor::full(vec![1, 4], 0.5), &labels, THRESHOLD).unwrap(), 0.5);
    let labels = [lv(&[1, 0]), lv(&[0, 1])];
    let complement = rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
    assert_eq!(pcss(&complement, &labels, THRESHOLD).unwrap(), 0.0);
    // single example, single label: both reduce to the same balanced accuracy
    for (p, y) in [(0.7, 1), (0.7, 0), (0.2, 1), (0.2, 0)] {
        let m = rows(&[&[p]]);
        let l = [lv(&[y])];
        assert_eq!(pess(&m, &l, THRESHOLD).unwrap(), pcss(&m, &l, THRESHOLD).unwrap());
    }
}

#[test]
fn shape_mismatch_is_config_error() {
    let labels = [lv(&[1, 0])];
    assert!(matches!(dice(&Tensor::zeros(vec![1, 3]), &labels), Err(Error::Config(_))));
    assert!(matches!(nll(&Tensor::zeros(vec![2, 2]), &labels), Err(Error::Config(_))));
}

fn sample_report(with_auc: bool) -> MetricsReport {
    MetricsReport {
        nll: 0.1 + 0.2,
        auc: with_auc.then(|| AucReport::new(&["Edema".into(), "No Mass".into()], vec![Some(1.0 / 3.0), None])),
        dice: 2.0 / 3.0,
        pess: 0.123456789012345678,
        pcss: 1e-17,
        threshold: THRESHOLD,
        n: 250,
    }
}

#[test]
fn report_round_trips_bit_exactly() {
    for with_auc in [true, false] {
        let r = sample_report(with_auc);
        assert_eq!(MetricsReport::from_kv(&r.to_kv()).unwrap(), r);
        assert_eq!(MetricsReport::from_csv(&r.to_csv().unwrap()).unwrap(), r);
    }
    let r = sample_report(true);
    assert_eq!(r.auc.as_ref().unwrap().mean, Some(1.0 / 3.0));
    let keys: Vec<String> = r.fields().into_iter().map(|(k, _)| k).collect();
    assert_eq!(keys, ["nll", "auc_mean", "auc_Edema", "auc_No Mass", "dice", "pess", "pcss", "threshold", "n"]);
    assert!(!sample_report(false).to_kv().contains("auc"));
}

#[test]
fn metric_names_parse() {
    for m in Metric::ALL {
        assert_eq!(m.name().parse::<Metric>().unwrap(), m);
    }
    assert!(matches!("accuracy".parse::<Metric>(), Err(Error::Usage(_))));
    assert!(Metric::Nll.improves(1.0, 2.0) && !Metric::Dice.improves(0.4, 0.4));
}
