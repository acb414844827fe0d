use super::system::{score_sequence, System};
use crate::basemodel::StepContext;
use crate::error::{invalid, Error, Result};
use crate::evalbench::corpus::DomainCorpus;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastivePair {
    pub source: Vec<u32>,
    pub reference: Vec<u32>,
    pub contrastive: Vec<Vec<u32>>,
}

/// Fraction of pairs whose reference scores strictly above every contrastive
/// variant. Pair `i` is scored as sentence `i`.
pub fn contrastive_eval(system: &System<'_>, pairs: &[ContrastivePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("contrastive pairs"));
    }
    let mut correct = 0usize;
    for (i, pair) in pairs.iter().enumerate() {
        if pair.contrastive.is_empty() {
            return Err(invalid(format!("contrastive pair {i} has no contrastive variant")));
        }
        let reference = score_sequence(system, i, &pair.source, &pair.reference)?;
        let mut wins = true;
        for c in &pair.contrastive {
            if score_sequence(system, i, &pair.source, c)? >= reference {
                wins = false;
                break;
            }
        }
        correct += usize::from(wins);
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// Per-class counts of force-decoded steps whose gold token is the argmax of
/// the example-based distribution but not of the model distribution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribution {
    pub attributed: Vec<usize>,
    /// Gold tokens per class, attributed or not.
    pub steps: Vec<usize>,
    pub total_steps: usize,
}

impl Attribution {
    /// Attributed steps of the class over all steps; the shares sum to
    /// [`Attribution::attributed_fraction`] when every token has a class.
    pub fn share(&self, class: usize) -> f64 {
        ratio(self.attributed[class], self.total_steps)
    }

    /// Attributed steps of the class over the steps of that class.
    pub fn rate(&self, class: usize) -> f64 {
        ratio(self.attributed[class], self.steps[class])
    }

    pub fn attributed_fraction(&self) -> f64 {
        ratio(self.attributed.iter().sum(), self.total_steps)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn argmax(p: &[f64]) -> Option<u32> {
    let mut best: Option<usize> = None;
    for (t, &x) in p.iter().enumerate() {
        if best.is_none_or(|b| x > p[b]) {
            best = Some(t);
        }
    }
    best.map(|b| b as u32)
}

/// `class_of` maps a target token to its class below `classes`, or `None`
/// for tokens outside the map; such steps count toward the total only.
pub fn smoothing_attribution(
    system: &System<'_>,
    corpus: &DomainCorpus,
    class_of: &dyn Fn(u32) -> Option<usize>,
    classes: usize,
) -> Result<Attribution> {
    if system.params.is_none() || system.retrieval.is_none() {
        return Err(invalid("attribution needs a smoothed system"));
    }
    let eos = system.base.eos();
    let mut out = Attribution {
        attributed: vec![0; classes],
        steps: vec![0; classes],
        total_steps: 0,
    };
    for (n, s) in corpus.sentences.iter().enumerate() {
        for i in 0..=s.tgt.len() {
            let y = s.tgt.get(i).copied().unwrap_or(eos);
            let step = system.step(StepContext {
                sentence: n,
                source: &s.src,
                prefix: &s.tgt[..i],
            })?;
            out.total_steps += 1;
            let Some(class) = class_of(y) else { continue };
            if class >= classes {
                return Err(invalid(format!("class {class} out of range for {classes} classes")));
            }
            out.steps[class] += 1;
            if step.p_e.argmax() == Some(y) && argmax(&step.p_m) != Some(y) {
                out.attributed[class] += 1;
            }
        }
    }
    Ok(out)
}
