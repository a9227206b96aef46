//! Identity-balanced batch construction.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::{Error, Result};

/// Group record indices by identity class.
pub fn group_by_identity(classes: &[u32]) -> BTreeMap<u32, Vec<usize>> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &c) in classes.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    groups
}

/// `k` indices from `pool`: without replacement when possible, else with.
fn draw_k<R: Rng>(pool: &[usize], k: usize, rng: &mut R) -> Vec<usize> {
    if pool.len() >= k {
        pool.choose_multiple(rng, k).copied().collect()
    } else {
        (0..k).map(|_| *pool.choose(rng).expect("non-empty group")).collect()
    }
}

/// One batch of `p` distinct identities with `k` samples each.
pub fn pk_sample<R: Rng>(groups: &BTreeMap<u32, Vec<usize>>, p: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if groups.len() < 2 {
        return Err(Error::data("identity sampling needs at least two identities"));
    }
    if groups.len() < p {
        return Err(Error::data(format!("{} identities available, {p} requested per batch", groups.len())));
    }
    let ids: Vec<&u32> = groups.keys().collect();
    let chosen: Vec<&&u32> = ids.choose_multiple(rng, p).collect();
    Ok(chosen.into_iter().flat_map(|id| draw_k(&groups[*id], k, rng)).collect())
}

/// An epoch of identity-balanced batches: identities are shuffled and cut
/// into chunks of `p`; each identity contributes `k` samples. A trailing
/// chunk with fewer than two identities is dropped; when fewer than `p`
/// identities exist in total, every batch uses all of them.
pub fn pk_epoch<R: Rng>(groups: &BTreeMap<u32, Vec<usize>>, p: usize, k: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if groups.len() < 2 {
        return Err(Error::data("identity sampling needs at least two identities"));
    }
    let mut ids: Vec<u32> = groups.keys().copied().collect();
    ids.shuffle(rng);
    let p = p.min(ids.len()).max(2);
    let mut batches = Vec::new();
    for chunk in ids.chunks(p) {
        if chunk.len() < 2 {
            continue;
        }
        batches.push(chunk.iter().flat_map(|id| draw_k(&groups[id], k, rng)).collect());
    }
    Ok(batches)
}

/// `repeat` shuffled passes over `n` items in batches of `batch_size`. The
/// last batch of a pass may be short; a lone trailing item joins the batch
/// before it so batch statistics stay defined.
pub fn plain_epoch<R: Rng>(n: usize, batch_size: usize, repeat: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for _ in 0..repeat {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut pass: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect();
        if pass.len() > 1 && pass.last().is_some_and(|b| b.len() == 1) {
            let lone = pass.pop().expect("checked");
            pass.last_mut().expect("checked").extend(lone);
        }
        out.extend(pass);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use std::collections::BTreeSet;

    fn groups(sizes: &[usize]) -> BTreeMap<u32, Vec<usize>> {
        let mut classes = Vec::new();
        for (c, &n) in sizes.iter().enumerate() {
            classes.extend(std::iter::repeat_n(c as u32, n));
        }
        group_by_identity(&classes)
    }

    fn class_of(g: &BTreeMap<u32, Vec<usize>>, i: usize) -> u32 {
        *g.iter().find(|(_, v)| v.contains(&i)).unwrap().0
    }

    #[test]
    fn batch_has_p_identities_of_k() {
        let g = groups(&[5; 12]);
        let b = pk_sample(&g, 8, 4, &mut seed::rng(1)).unwrap();
        assert_eq!(b.len(), 32);
        let ids: BTreeSet<u32> = b.iter().map(|&i| class_of(&g, i)).collect();
        assert_eq!(ids.len(), 8);
        assert_eq!(b, pk_sample(&g, 8, 4, &mut seed::rng(1)).unwrap());
    }

    #[test]
    fn small_identity_is_sampled_with_replacement() {
        let g = groups(&[2, 6]);
        let b = pk_sample(&g, 2, 4, &mut seed::rng(3)).unwrap();
        assert_eq!(b.iter().filter(|&&i| i < 2).count(), 4);
    }

    #[test]
    fn single_identity_rejected() {
        assert!(pk_sample(&groups(&[4]), 1, 4, &mut seed::rng(0)).is_err());
    }

    #[test]
    fn epoch_covers_every_identity_once() {
        let g = groups(&[4; 40]);
        let batches = pk_epoch(&g, 8, 4, &mut seed::rng(2)).unwrap();
        assert_eq!(batches.len(), 5);
        let mut seen = BTreeSet::new();
        for b in &batches {
            let ids: BTreeSet<u32> = b.iter().map(|&i| class_of(&g, i)).collect();
            assert_eq!(ids.len(), 8);
            for id in ids {
                assert!(seen.insert(id));
            }
        }
    }

    #[test]
    fn plain_epoch_repeats() {
        let b = plain_epoch(10, 4, 2, &mut seed::rng(0));
        assert_eq!(b.len(), 6);
        assert_eq!(b.iter().map(Vec::len).sum::<usize>(), 20);
        let b = plain_epoch(9, 4, 1, &mut seed::rng(0));
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
    }
}
