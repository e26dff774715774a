use std::collections::BTreeMap;
use std::sync::Mutex;

use super::{MaskHypothesis, Perception, RefinedBox};
use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::geometry::BBox;

type HypothesisLog = BTreeMap<(usize, [i64; 4]), Vec<MaskHypothesis>>;

/// Passes every query through to `inner` and keeps the segmentation answers,
/// keyed the way [`FileProvider`](super::FileProvider) looks them up.
pub struct Recorder<'p, P: ?Sized> {
    inner: &'p P,
    log: Mutex<(HypothesisLog, Vec<(usize, [i64; 4])>)>,
}

impl<'p, P: Perception + ?Sized> Recorder<'p, P> {
    pub fn new(inner: &'p P) -> Self {
        Recorder {
            inner,
            log: Mutex::new((BTreeMap::new(), Vec::new())),
        }
    }

    /// The recorded hypotheses. Fails if two prompts falling into the same
    /// integer bucket of a frame got different answers, since a replay could
    /// not tell them apart.
    pub fn finish(self) -> Result<HypothesisLog> {
        let (log, mut clashes) = self.log.into_inner().expect("recorder lock poisoned");
        clashes.sort_unstable();
        match clashes.first() {
            None => Ok(log),
            Some((t, b)) => Err(Error::Config(format!(
                "{} prompt bucket(s) recorded conflicting segmentations, first at frame {t} box {b:?}",
                clashes.len()
            ))),
        }
    }
}

impl<P: Perception + ?Sized> Perception for Recorder<'_, P> {
    fn frame_count(&self) -> usize {
        self.inner.frame_count()
    }

    fn dims(&self) -> (u32, u32) {
        self.inner.dims()
    }

    fn detect(&self, t: usize, prompts: &[String]) -> Result<Vec<Detection>> {
        self.inner.detect(t, prompts)
    }

    fn refine(&self, t: usize, query: &BBox, prev_objectness: f64) -> Result<RefinedBox> {
        self.inner.refine(t, query, prev_objectness)
    }

    fn segment(&self, t_next: usize, prompt: &BBox, t_prev: usize) -> Result<Vec<MaskHypothesis>> {
        let hyps = self.inner.segment(t_next, prompt, t_prev)?;
        let key = (t_next, prompt.rounded());
        let mut guard = self.log.lock().expect("recorder lock poisoned");
        let (log, clashes) = &mut *guard;
        match log.get(&key) {
            Some(seen) if *seen != hyps => clashes.push(key),
            Some(_) => {}
            None => {
                log.insert(key, hyps.clone());
            }
        }
        Ok(hyps)
    }

    fn flow_fwd(&self, t: usize) -> Result<&FlowField> {
        self.inner.flow_fwd(t)
    }

    fn flow_bwd(&self, t: usize) -> Result<&FlowField> {
        self.inner.flow_bwd(t)
    }
}
