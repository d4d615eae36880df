use serde::{Deserialize, Serialize};

/// Overhead parameters of a simulated enclave. Call costs are seconds per
/// million crossings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnclaveProfile {
    pub heap_mb: f64,
    pub init_cost_per_mb: f64,
    pub ocall_cost: f64,
    pub ecall_cost: f64,
    pub epc_usable_mb: f64,
    pub paging_slowdown: f64,
}

impl Default for EnclaveProfile {
    fn default() -> Self {
        Self {
            heap_mb: 1024.0,
            init_cost_per_mb: 0.04,
            ocall_cost: 5.27,
            ecall_cost: 4.65,
            epc_usable_mb: 90.0,
            paging_slowdown: 100.0,
        }
    }
}

impl EnclaveProfile {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("heap_mb", self.heap_mb),
            ("init_cost_per_mb", self.init_cost_per_mb),
            ("ocall_cost", self.ocall_cost),
            ("ecall_cost", self.ecall_cost),
            ("epc_usable_mb", self.epc_usable_mb),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be a nonnegative number, got {v}"));
            }
        }
        if !(self.paging_slowdown.is_finite() && self.paging_slowdown >= 1.0) {
            return Err(format!("paging_slowdown must be at least 1, got {}", self.paging_slowdown));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overhead {
    pub init: f64,
    pub calls: f64,
    pub compute: f64,
}

impl Overhead {
    pub fn total(&self) -> f64 {
        self.init + self.calls + self.compute
    }
}

pub fn overhead_breakdown(
    profile: &EnclaveProfile,
    heap_mb: f64,
    n_ecalls: u64,
    n_ocalls: u64,
    working_set_mb: f64,
    base_time: f64,
) -> Overhead {
    // divide first so a round million of calls costs exactly the per-million figure
    let calls = (n_ecalls as f64 / 1e6) * profile.ecall_cost + (n_ocalls as f64 / 1e6) * profile.ocall_cost;
    let multiplier = if working_set_mb > profile.epc_usable_mb {
        profile.paging_slowdown
    } else {
        1.0
    };
    Overhead {
        init: heap_mb * profile.init_cost_per_mb,
        calls,
        compute: base_time * multiplier,
    }
}

/// Modeled seconds for a secure task: enclave init for `heap_mb` (pass 0 when
/// the worker is already up), boundary crossings, and compute with the paging
/// multiplier once the working set exceeds usable EPC.
pub fn model_secure_overhead(
    profile: &EnclaveProfile,
    heap_mb: f64,
    n_ecalls: u64,
    n_ocalls: u64,
    working_set_mb: f64,
    base_time: f64,
) -> f64 {
    overhead_breakdown(profile, heap_mb, n_ecalls, n_ocalls, working_set_mb, base_time).total()
}
