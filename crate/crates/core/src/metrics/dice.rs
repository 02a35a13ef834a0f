//! Dice overlap between label maps.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::volgrid::{check_same_shape, LabelMap};

/// Per-class and mean Dice.
#[derive(Debug, Clone)]
pub struct DiceScores {
    pub per_class: BTreeMap<u32, f64>,
    pub mean: f64,
}

/// `2|A_c ∩ B_c| / (|A_c| + |B_c|)` per class. With `classes = None` the
/// union of foreground classes in either map is scored; classes absent from
/// both maps are excluded from the mean.
pub fn dice(a: &LabelMap, b: &LabelMap, classes: Option<&[u32]>) -> Result<DiceScores> {
    check_same_shape(a.shape, b.shape, "dice")?;
    let class_list: Vec<u32> = match classes {
        Some(c) => c.to_vec(),
        None => {
            let mut all = a.classes();
            all.extend(b.classes());
            all.sort_unstable();
            all.dedup();
            all
        }
    };

    let mut per_class = BTreeMap::new();
    for &c in &class_list {
        let mut in_a = 0u64;
        let mut in_b = 0u64;
        let mut overlap = 0u64;
        for (&va, &vb) in a.values.iter().zip(&b.values) {
            let fa = va == c;
            let fb = vb == c;
            in_a += fa as u64;
            in_b += fb as u64;
            overlap += (fa && fb) as u64;
        }
        if in_a + in_b == 0 {
            continue; // absent from both: excluded
        }
        per_class.insert(c, 2.0 * overlap as f64 / (in_a + in_b) as f64);
    }
    if per_class.is_empty() {
        return Err(Error::EmptyMask("dice: no class present in either map"));
    }
    let mean = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(DiceScores { per_class, mean })
}
