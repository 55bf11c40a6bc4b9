use crate::{NnError, ParamId, ParamStore, Result, Scalar, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(NnError::Config(format!(
                "need alpha > 0, 0 <= beta1, beta2 < 1, epsilon > 0; got {self:?}"
            )))
        }
    }
}

/// Moment accumulators of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamSlot<T> {
    /// Updates applied to this parameter; drives its bias correction.
    pub step: u64,
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
}

/// Bias-corrected Adam over a subset of a [`ParamStore`].
///
/// Slots are created lazily, so parameters that never receive a gradient keep
/// their values and moments untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    /// Total calls to [`Adam::step`].
    pub step_count: u64,
    slots: Vec<Option<AdamSlot<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step_count: 0,
            slots: Vec::new(),
        })
    }

    pub fn slot(&self, id: ParamId) -> Option<&AdamSlot<T>> {
        self.slots.get(id.index()).and_then(Option::as_ref)
    }

    pub fn slots(&self) -> impl Iterator<Item = (ParamId, &AdamSlot<T>)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|s| (i, s)))
            .map(|(i, s)| (ParamId::new(i), s))
    }

    pub fn set_slot(&mut self, id: ParamId, slot: AdamSlot<T>) {
        if self.slots.len() <= id.index() {
            self.slots.resize(id.index() + 1, None);
        }
        self.slots[id.index()] = Some(slot);
    }

    /// Apply one update with learning rate `alpha` to every parameter in `grads`.
    ///
    /// All gradients are checked before any parameter is touched.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[(ParamId, Tensor4<T>)], alpha: f64) -> Result<()> {
        for (id, g) in grads {
            let p = params.get(*id);
            if g.shape() != p.value.shape() {
                return Err(NnError::Shape {
                    op: "adam_step",
                    expected: p.value.shape().to_string(),
                    got: g.shape().to_string(),
                });
            }
            if !g.is_finite() {
                return Err(NnError::NanGradient { param: p.name.clone() });
            }
        }
        let AdamConfig {
            beta1, beta2, epsilon, ..
        } = self.config;
        let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
        let eps = T::from_f64_lossy(epsilon);
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        for (id, g) in grads {
            if self.slots.len() <= id.index() {
                self.slots.resize(id.index() + 1, None);
            }
            let slot = self.slots[id.index()].get_or_insert_with(|| AdamSlot {
                step: 0,
                first_moment: vec![T::zero(); g.len()],
                second_moment: vec![T::zero(); g.len()],
            });
            slot.step += 1;
            let t = slot.step as i32;
            let correction1 = 1.0 - beta1.powi(t);
            let correction2 = 1.0 - beta2.powi(t);
            let step_size = T::from_f64_lossy(alpha / correction1);
            let root_c2 = T::from_f64_lossy(correction2.sqrt());
            let value = params.value_mut(*id).data_mut();
            for (((p, &gv), m), v) in value
                .iter_mut()
                .zip(g.data())
                .zip(slot.first_moment.iter_mut())
                .zip(slot.second_moment.iter_mut())
            {
                *m = b1 * *m + one_b1 * gv;
                *v = b2 * *v + one_b2 * gv * gv;
                *p = *p - step_size * *m / (v.sqrt() / root_c2 + eps);
            }
        }
        self.step_count += 1;
        Ok(())
    }
}
