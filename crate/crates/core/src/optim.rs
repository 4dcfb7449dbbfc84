use std::collections::BTreeMap;

use crate::model::{Gradients, Model, ParamGroup};

/// Momentum SGD with one velocity buffer set per parameter group.
///
/// Only groups present in the supplied [`Gradients`] are touched, so a
/// self-supervised step leaves the supervised head (and its velocity) alone.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub learning_rate: f32,
    pub momentum: f32,
    velocity: BTreeMap<ParamGroup, Vec<Vec<f32>>>,
}

impl Sgd {
    pub fn new(learning_rate: f32, momentum: f32) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &Gradients) {
        for group in ParamGroup::ALL {
            let Some(g) = grads.group(group) else {
                continue;
            };
            let params = model.group_params_mut(group);
            assert_eq!(params.len(), g.len(), "{} gradient count", group.name());
            let velocity = self
                .velocity
                .entry(group)
                .or_insert_with(|| params.iter().map(|p| vec![0.0; p.len()]).collect());
            for ((param, grad), vel) in params.into_iter().zip(g).zip(velocity.iter_mut()) {
                for ((w, &dw), v) in param.value.iter_mut().zip(grad).zip(vel.iter_mut()) {
                    *v = self.momentum * *v + dw;
                    *w -= self.learning_rate * *v;
                }
            }
        }
    }
}
