use super::{solve_kernel, KernelConfig, KernelError, KernelSolution};
use crate::geometry::SlitVector;
use dashmap::DashMap;
use std::sync::Arc;

const QUANTUM: f64 = 1e-9;

/// Concurrent memo of kernel solves, bucketed by the configuration quantized
/// to `1e-9`. A hit also requires bitwise equality of the stored state, so a
/// lookup never substitutes a neighbouring configuration and results do not
/// depend on which thread filled the bucket first.
#[derive(Debug)]
pub struct KernelCache {
    map: DashMap<Vec<i64>, Arc<KernelSolution>>,
    capacity: usize,
}

impl Default for KernelCache {
    fn default() -> Self {
        KernelCache::new(4096)
    }
}

fn key(s: &SlitVector, xi: f64) -> Vec<i64> {
    let mut k: Vec<i64> = s.to_vec().iter().map(|v| (v / QUANTUM).round() as i64).collect();
    k.push((xi / QUANTUM).round() as i64);
    k
}

impl KernelCache {
    pub fn new(capacity: usize) -> Self {
        KernelCache {
            map: DashMap::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn clear(&self) {
        self.map.clear();
    }

    pub fn get(&self, s: &SlitVector, xi: f64) -> Option<Arc<KernelSolution>> {
        let hit = self.map.get(&key(s, xi))?;
        (hit.slits() == s && hit.xi().to_bits() == xi.to_bits()).then(|| Arc::clone(&hit))
    }

    pub fn insert(&self, sol: Arc<KernelSolution>) {
        if self.map.len() >= self.capacity {
            self.map.clear();
        }
        self.map.insert(key(sol.slits(), sol.xi()), sol);
    }

    pub fn solve(&self, s: &SlitVector, xi: f64, cfg: &KernelConfig) -> Result<Arc<KernelSolution>, KernelError> {
        if let Some(hit) = self.get(s, xi) {
            return Ok(hit);
        }
        let sol = Arc::new(solve_kernel(s, xi, cfg)?);
        self.insert(Arc::clone(&sol));
        Ok(sol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_hits_only() {
        let cache = KernelCache::new(8);
        let cfg = KernelConfig::default();
        let s = SlitVector::validate(&[1.0, -1.0, 1.0]).unwrap();
        let a = cache.solve(&s, 0.0, &cfg).unwrap();
        let b = cache.solve(&s, 0.0, &cfg).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        let near = s.translate(1e-12);
        assert!(cache.get(&near, 0.0).is_none());
    }

    #[test]
    fn bounded() {
        let cache = KernelCache::new(2);
        let cfg = KernelConfig::default();
        let s = SlitVector::validate(&[1.0, -1.0, 1.0]).unwrap();
        for k in 0..5 {
            cache.solve(&s, 0.1 * k as f64, &cfg).unwrap();
            assert!(cache.len() <= 2);
        }
    }
}
