mod common;

use common::oracles::count_metrics;
use common::tasks::highlight_task;
use common::*;
use mrc::corpus::Dataset;
use mrc::ensemble::*;
use mrc::model::{Checkpoint, Head, Model, ModelConfig};
use mrc::strategies::OrderScheme;
use mrc::text::{build_vocab, Tagger, Vocab};
use mrc::train::{argmax, compute_metrics};

fn data() -> (Dataset, Vocab) {
    let d = highlight_task(30, 50, 6, 1, "e");
    let texts: Vec<&str> = d.texts().collect();
    let vocab = build_vocab(&texts, 200).unwrap();
    (d, vocab)
}

fn checkpoint(vocab: &Vocab, seed: u64, scheme: OrderScheme) -> Checkpoint {
    let cfg = ModelConfig {
        layers: 1,
        heads: 2,
        d_model: 8,
        d_ff: 16,
        max_len: 32,
        vocab_size: vocab.len(),
        dropout: 0.0,
        init_std: 0.5,
        highlight: true,
    };
    Checkpoint {
        model: Model::new(cfg, &mut rng(seed)).unwrap(),
        vocab: vocab.clone(),
        scheme,
        head: Head::Softmax,
    }
}

fn solo_scores(ck: &Checkpoint, inst: &mrc::corpus::MrcInstance) -> Vec<f64> {
    ensemble_scores(inst, &Ensemble::new(vec![Member::new(ck.clone())]).unwrap(), Tagger::bundled()).unwrap()
}

#[test]
fn single_member_scores_are_the_member_scores() {
    let (d, vocab) = data();
    let ck = checkpoint(&vocab, 1, OrderScheme::dq_o());
    let enc = mrc::strategies::Encoder::new(&vocab, Tagger::bundled(), OrderScheme::dq_o(), 32);
    for inst in &d.instances[..5] {
        let direct = ck.model.forward_choice(&enc.encode(inst).unwrap()).unwrap();
        assert_eq!(solo_scores(&ck, inst), direct);
    }
}

#[test]
fn mean_is_order_independent_and_scale_covariant() {
    let (d, vocab) = data();
    let cks = [
        checkpoint(&vocab, 1, OrderScheme::dq_o()),
        checkpoint(&vocab, 2, OrderScheme::o_qd()),
        checkpoint(&vocab, 3, OrderScheme::qd_o()),
    ];
    let ens = |order: &[usize], c: f64| {
        let members = order
            .iter()
            .map(|&i| {
                let mut ck = cks[i].clone();
                ck.model.params.clf_w.mapv_inplace(|w| w * c);
                Member::new(ck)
            })
            .collect();
        Ensemble::new(members).unwrap()
    };
    let base = ens(&[0, 1, 2], 1.0);
    for inst in &d.instances {
        let s = ensemble_scores(inst, &base, Tagger::bundled()).unwrap();
        for order in [[2, 1, 0], [1, 2, 0]] {
            let p = ensemble_scores(inst, &ens(&order, 1.0), Tagger::bundled()).unwrap();
            for (a, b) in s.iter().zip(&p) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
            assert_eq!(argmax(&s), argmax(&p));
        }
        let scaled = ensemble_scores(inst, &ens(&[0, 1, 2], 3.5), Tagger::bundled()).unwrap();
        for (a, b) in s.iter().zip(&scaled) {
            assert!((3.5 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        assert_eq!(argmax(&s), argmax(&scaled));
    }
}

#[test]
fn duplicate_members_predict_like_one() {
    let (d, vocab) = data();
    let ck = checkpoint(&vocab, 4, OrderScheme::dq_o());
    let ens = Ensemble::new(vec![Member::new(ck.clone()); 3]).unwrap();
    let report = evaluate_ensemble(&ens, &d, Tagger::bundled()).unwrap();
    assert_eq!(report.ensemble, report.members[0].metrics);
    for inst in &d.instances {
        assert_eq!(
            argmax(&ensemble_scores(inst, &ens, Tagger::bundled()).unwrap()),
            argmax(&solo_scores(&ck, inst))
        );
    }
}

#[test]
fn disjoint_members_by_enumeration() {
    // member A is right on instances 0 and 1, member B on 2 and 3
    let a = [vec![3.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.5, 0.0, 0.3]];
    let b = [vec![0.0, 1.0, 0.0], vec![1.5, 0.0, 0.0], vec![0.0, 0.0, 4.0], vec![0.0, 0.0, 1.0]];
    let gold = vec![vec![0], vec![1], vec![2], vec![2]];
    let mean: Vec<Vec<f64>> = a
        .iter()
        .zip(&b)
        .map(|(x, y)| mean_scores(&[x.clone(), y.clone()]).unwrap())
        .collect();
    // means: [1.5,.5,0] [.75,1,0] [.5,0,2] [.25,0,.65], all correct
    let m = compute_metrics(Head::Softmax, &mean, &gold);
    assert_eq!(m.accuracy, Some(count_metrics(&mean, &gold).accuracy));
    assert_eq!(m.accuracy, Some(1.0));
    assert_eq!(compute_metrics(Head::Softmax, &a, &gold).accuracy, Some(0.5));
    assert_eq!(compute_metrics(Head::Softmax, &b, &gold).accuracy, Some(0.5));
}

#[test]
fn back_and_forth_checks_stored_schemes() {
    let (d, vocab) = data();
    let fwd = checkpoint(&vocab, 5, OrderScheme::dq_o());
    let bwd = checkpoint(&vocab, 6, OrderScheme::o_qd());
    let report = back_and_forth_eval(fwd.clone(), bwd.clone(), &OrderScheme::dq_o(), &d, Tagger::bundled()).unwrap();
    assert_eq!(report.members.len(), 2);
    assert_eq!(report.members[1].scheme, OrderScheme::o_qd());
    let err = back_and_forth_eval(fwd.clone(), fwd, &OrderScheme::dq_o(), &d, Tagger::bundled()).unwrap_err();
    assert!(err.to_string().contains("backward"));
    assert!(back_and_forth_eval(bwd.clone(), bwd, &OrderScheme::dq_o(), &d, Tagger::bundled()).is_err());
}

#[test]
fn members_must_agree_on_head_and_vocabulary() {
    let (_, vocab) = data();
    let a = checkpoint(&vocab, 1, OrderScheme::dq_o());
    let mut b = checkpoint(&vocab, 2, OrderScheme::dq_o());
    b.head = Head::Sigmoid;
    assert!(Ensemble::new(vec![Member::new(a.clone()), Member::new(b)]).is_err());
    let other = Vocab::from_surfaces(["x", "y"]).unwrap();
    let c = checkpoint(&other, 3, OrderScheme::dq_o());
    assert!(Ensemble::new(vec![Member::new(a), Member::new(c)]).is_err());
    assert!(Ensemble::new(vec![]).is_err());
}
