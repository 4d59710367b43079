//! An eLR network and an HR network over one parameter store.

use crate::coupled::schedule::{CouplingSchedule, COUPLING_LAYERS};
use crate::error::Result;
use crate::nn::network::{param_decls, Model, Network};
use crate::nn::params::{ParamStore, Partition};
use crate::nn::spec::NetworkSpec;
use crate::tensor::Scalar;

/// Two networks with identical architecture whose leading output channels
/// in every layer resolve to the same stored tensors.
///
/// Store names are `shared/<param>`, `elr/<param>` and `hr/<param>`.
#[derive(Clone, Debug)]
pub struct CoupledPair<T = f32> {
    pub store: ParamStore<T>,
    pub elr: Network<T>,
    pub hr: Network<T>,
    schedule: CouplingSchedule,
}

/// Builds the pair. The eLR network's initial values equal those of
/// `build_network(spec, seed)`; the HR network's private channels are drawn
/// independently.
pub fn build_coupled_pair<T: Scalar>(
    spec: &NetworkSpec,
    schedule: CouplingSchedule,
    seed: u64,
) -> Result<CoupledPair<T>> {
    let mut store = ParamStore::new();
    let mut elr_parts = Vec::new();
    let mut hr_parts = Vec::new();
    for decl in param_decls(spec)? {
        let d = decl.out_channels();
        let k = schedule.shared_count(decl.coupling_layer, d);
        let elr_init = decl.initial_value::<T>(spec.init_std, seed, "elr");
        let hr_init = decl.initial_value::<T>(spec.init_std, seed, "hr");
        let mut elr = Vec::new();
        let mut hr = Vec::new();
        if k > 0 {
            let id = store.insert(format!("shared/{}", decl.name), Partition::Shared, elr_init.slice_last(0, k)?)?;
            elr.push(id);
            hr.push(id);
        }
        if k < d {
            elr.push(store.insert(format!("elr/{}", decl.name), Partition::ElrOnly, elr_init.slice_last(k, d - k)?)?);
            hr.push(store.insert(format!("hr/{}", decl.name), Partition::HrOnly, hr_init.slice_last(k, d - k)?)?);
        }
        elr_parts.push(elr);
        hr_parts.push(hr);
    }
    let mut elr_parts = elr_parts.into_iter();
    let mut hr_parts = hr_parts.into_iter();
    let elr = Network::assemble(spec, &store, |_| Ok(elr_parts.next().expect("one entry per decl")))?;
    let hr = Network::assemble(spec, &store, |_| Ok(hr_parts.next().expect("one entry per decl")))?;
    Ok(CoupledPair {
        store,
        elr,
        hr,
        schedule,
    })
}

impl<T: Scalar> CoupledPair<T> {
    pub fn schedule(&self) -> CouplingSchedule {
        self.schedule
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.elr.spec()
    }

    /// Shared output channels `k^n` of coupling layers 1..=5.
    pub fn shared_counts(&self) -> [usize; COUPLING_LAYERS] {
        let spec = self.spec();
        std::array::from_fn(|i| {
            let n = i + 1;
            self.schedule.shared_count(n, spec.layer_width(n).expect("layers 1..=5"))
        })
    }

    /// A self-contained copy of the eLR network for testing.
    pub fn decouple(&self) -> Result<Model<T>> {
        self.elr.snapshot(&self.store)
    }

    /// A self-contained copy of the HR network.
    pub fn hr_model(&self) -> Result<Model<T>> {
        self.hr.snapshot(&self.store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{FusionLayer, FusionOp};

    #[test]
    fn default_schedule_counts() {
        let spec = NetworkSpec::fused(12, FusionOp::Conv, FusionLayer::Conv3);
        let pair = build_coupled_pair::<f32>(&spec, CouplingSchedule::default(), 1).unwrap();
        assert_eq!(pair.shared_counts(), [0, 16, 64, 192, 12]);
        let bank = pair.elr.parts("fusion.weight").unwrap();
        assert_eq!(pair.store.value(bank[0]).last_dim(), 64);
    }

    #[test]
    fn uncoupled_pair_has_no_shared_storage() {
        let spec = NetworkSpec::spatial(3).with_widths([2, 2, 2], 4);
        let pair = build_coupled_pair::<f32>(&spec, CouplingSchedule::uncoupled(), 1).unwrap();
        assert!(pair.store.ids_in(Partition::Shared).is_empty());
        let e = pair.elr.param_ids();
        assert!(pair.hr.param_ids().iter().all(|id| !e.contains(id)));
    }
}
