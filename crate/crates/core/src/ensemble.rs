//! Logit-averaging ensembles. Each member encodes the instance under its own
//! segment order, and the ensemble score of an option is the unweighted mean
//! of the members' scores for it.

use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Dataset, MrcInstance};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Head};
use crate::parallel;
use crate::strategies::{Encoder, OrderScheme};
use crate::text::Tagger;
use crate::train::{compute_metrics, Metrics};

/// `path:scheme` as given on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberSpec {
    pub path: PathBuf,
    pub scheme: OrderScheme,
}

impl FromStr for MemberSpec {
    type Err = Error;

    /// Splits at the first `:` whose remainder parses as a scheme, so both
    /// `a.ckpt:dq_o` and `a.ckpt:qd:o` work.
    fn from_str(s: &str) -> Result<Self> {
        for (i, _) in s.match_indices(':') {
            if let Ok(scheme) = s[i + 1..].parse() {
                if i > 0 {
                    return Ok(MemberSpec {
                        path: PathBuf::from(&s[..i]),
                        scheme,
                    });
                }
            }
        }
        Err(Error::invalid(format!("ensemble member {s:?} is not of the form PATH:SCHEME")))
    }
}

pub fn parse_members(list: &str) -> Result<Vec<MemberSpec>> {
    list.split(',').filter(|s| !s.is_empty()).map(str::parse).collect()
}

/// A checkpoint and the segment order it reads with.
#[derive(Debug, Clone)]
pub struct Member {
    pub checkpoint: Checkpoint,
    pub scheme: OrderScheme,
}

impl Member {
    /// Uses the scheme stored in the checkpoint.
    pub fn new(checkpoint: Checkpoint) -> Self {
        let scheme = checkpoint.scheme.clone();
        Member { checkpoint, scheme }
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    members: Vec<Member>,
}

impl Ensemble {
    /// Members must share the vocabulary and head type.
    pub fn new(members: Vec<Member>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::invalid("ensemble needs at least one member"))?;
        for (i, m) in members.iter().enumerate().skip(1) {
            if m.checkpoint.head != first.checkpoint.head {
                return Err(Error::invalid(format!(
                    "member {i} uses the {} head but member 0 uses {}",
                    m.checkpoint.head, first.checkpoint.head
                )));
            }
            if m.checkpoint.vocab != first.checkpoint.vocab {
                return Err(Error::invalid(format!("member {i} has a different vocabulary from member 0")));
            }
        }
        Ok(Ensemble { members })
    }

    pub fn load(specs: &[MemberSpec]) -> Result<Self> {
        let members = specs
            .iter()
            .map(|s| {
                Ok(Member {
                    checkpoint: Checkpoint::load(&s.path)?,
                    scheme: s.scheme.clone(),
                })
            })
            .collect::<Result<_>>()?;
        Self::new(members)
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn head(&self) -> Head {
        self.members[0].checkpoint.head
    }
}

fn member_scores(member: &Member, inst: &MrcInstance, tagger: &Tagger) -> Result<Vec<f64>> {
    let ck = &member.checkpoint;
    let encoder = Encoder::new(&ck.vocab, tagger, member.scheme.clone(), ck.model.config.max_len);
    ck.model.forward_choice(&encoder.encode(inst)?)
}

/// Element-wise mean of per-member score vectors, summed in member order.
pub fn mean_scores(per_member: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = per_member.first().ok_or_else(|| Error::invalid("no member scores"))?;
    let n = first.len();
    if let Some((i, s)) = per_member.iter().enumerate().find(|(_, s)| s.len() != n) {
        return Err(Error::invalid(format!(
            "member {i} produced {} scores but member 0 produced {n}",
            s.len()
        )));
    }
    let k = per_member.len() as f64;
    Ok((0..n)
        .map(|j| {
            let mut sum = 0.0;
            for s in per_member {
                sum += s[j];
            }
            sum / k
        })
        .collect())
}

pub fn ensemble_scores(inst: &MrcInstance, ensemble: &Ensemble, tagger: &Tagger) -> Result<Vec<f64>> {
    let per_member = ensemble
        .members
        .iter()
        .map(|m| member_scores(m, inst, tagger))
        .collect::<Result<Vec<_>>>()?;
    mean_scores(&per_member)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberReport {
    pub scheme: OrderScheme,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleReport {
    pub head: Head,
    pub ensemble: Metrics,
    pub members: Vec<MemberReport>,
}

/// Ensemble metrics plus each member's solo metrics on a labeled dataset.
pub fn evaluate_ensemble(ensemble: &Ensemble, dataset: &Dataset, tagger: &Tagger) -> Result<EnsembleReport> {
    if let Some(inst) = dataset.instances.iter().find(|i| !i.is_labeled()) {
        return Err(Error::invalid(format!("instance {:?} has no gold label", inst.id)));
    }
    let per_instance: Vec<Vec<Vec<f64>>> = parallel::install(|| {
        dataset
            .instances
            .par_iter()
            .map(|inst| {
                ensemble
                    .members
                    .iter()
                    .map(|m| member_scores(m, inst, tagger))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()
    })?;
    let head = ensemble.head();
    let gold: Vec<Vec<usize>> = dataset.instances.iter().map(|i| i.gold.clone()).collect();
    let mean: Vec<Vec<f64>> = per_instance.iter().map(|s| mean_scores(s)).collect::<Result<_>>()?;
    let members = ensemble
        .members
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let solo: Vec<Vec<f64>> = per_instance.iter().map(|s| s[k].clone()).collect();
            MemberReport {
                scheme: m.scheme.clone(),
                metrics: compute_metrics(head, &solo, &gold),
            }
        })
        .collect();
    Ok(EnsembleReport {
        head,
        ensemble: compute_metrics(head, &mean, &gold),
        members,
    })
}

/// Evaluates the pair of a model trained under `base` and one trained under
/// its reverse, checking both against their stored training schemes.
pub fn back_and_forth_eval(
    forward: Checkpoint,
    backward: Checkpoint,
    base: &OrderScheme,
    dataset: &Dataset,
    tagger: &Tagger,
) -> Result<EnsembleReport> {
    let reverse = base.reversed();
    for (ck, want, role) in [(&forward, base, "forward"), (&backward, &reverse, "backward")] {
        if &ck.scheme != want {
            return Err(Error::invalid(format!(
                "{role} checkpoint was trained with {} but {want} is required",
                ck.scheme
            )));
        }
    }
    let ensemble = Ensemble::new(vec![Member::new(forward), Member::new(backward)])?;
    evaluate_ensemble(&ensemble, dataset, tagger)
}
