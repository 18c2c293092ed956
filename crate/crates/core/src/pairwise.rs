//! Pair-wise bilateral trading.
//!
//! Participants trade two at a time: each pair clears internally at its own
//! bilateral price (the two-participant clearing price), so the whole-market
//! outcome depends on how pairs are formed. Pairing strategies: seeded
//! random, greedy on joint surplus, and buyer-proposing deferred acceptance
//! over surplus-ranked preference lists.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::common_pool::{autarky_price, clear_market};
use crate::error::{MarketError, Result};
use crate::market_core::{
    agricultural_utility, total_utility, Allocation, MarketConfig, Participant,
};

/// A cleared two-party trade.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BilateralDeal {
    pub id_i: String,
    pub id_j: String,
    /// Bilateral price in $/ML (the n = 2 clearing price).
    pub q_tilde: f64,
    pub alloc_i: Allocation,
    pub alloc_j: Allocation,
}

/// How participants are split into buyers and sellers before matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifyRule {
    /// Buyer iff the autarky price exceeds the common-pool equilibrium price.
    CommonPoolPrice,
    /// Buyer iff the autarky price exceeds the population median autarky price.
    MedianAutarky,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingStrategy {
    Random,
    Greedy,
    Stable,
}

/// Surplus-ranked preference lists over a buyer/seller split.
///
/// `buyers`/`sellers` hold population indices; preference lists hold
/// positions into the opposite side's vector, best first.
#[derive(Debug, Clone)]
pub struct PreferenceTable {
    pub buyers: Vec<usize>,
    pub sellers: Vec<usize>,
    pub buyer_prefs: Vec<Vec<usize>>,
    pub seller_prefs: Vec<Vec<usize>>,
}

/// A stable-matching result with its proposal-round count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Matching {
    /// (buyer, seller) population-index pairs.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched: Vec<usize>,
    /// Synchronized proposal rounds executed.
    pub stages: usize,
}

/// Whole-market outcome of one round of pair-wise trading.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairwiseOutcome {
    pub deals: Vec<BilateralDeal>,
    /// Population-index pairs aligned with `deals`.
    pub pair_indices: Vec<(usize, usize)>,
    /// Participants left in autarky (odd one out, or unmatched by DA).
    pub unmatched: Vec<usize>,
    pub total_welfare: f64,
    pub strategy: PairingStrategy,
    /// Proposal rounds, present for the stable strategy only.
    pub stages: Option<usize>,
}

impl PairwiseOutcome {
    /// Per-participant allocations (autarky for unmatched participants).
    pub fn allocations(&self, ps: &[Participant]) -> Vec<Allocation> {
        let mut allocs: Vec<Allocation> = ps.iter().map(Allocation::autarky).collect();
        for (&(i, j), deal) in self.pair_indices.iter().zip(&self.deals) {
            allocs[i] = deal.alloc_i;
            allocs[j] = deal.alloc_j;
        }
        allocs
    }

    /// Net traded volume over the whole market.
    pub fn clearing_residual(&self) -> f64 {
        self.deals.iter().map(|d| d.alloc_i.w_tr + d.alloc_j.w_tr).sum()
    }
}

/// Clear a two-participant market. Both parties weakly improve on autarky:
/// each maximizes utility at the bilateral price and no-trade stays feasible.
pub fn bilateral_clear(
    pi: &Participant,
    pj: &Participant,
    cfg: &MarketConfig,
) -> Result<BilateralDeal> {
    let res = clear_market(&[pi.clone(), pj.clone()], cfg)?;
    Ok(BilateralDeal {
        id_i: pi.id.clone(),
        id_j: pj.id.clone(),
        q_tilde: res.q,
        alloc_i: res.allocations[0],
        alloc_j: res.allocations[1],
    })
}

fn utility_gain(
    me: &Participant,
    other: &Participant,
    cfg: &MarketConfig,
) -> Result<f64> {
    let deal = bilateral_clear(me, other, cfg)?;
    let after = total_utility(&deal.alloc_i, deal.q_tilde, me, cfg)?;
    let autarky = agricultural_utility(me.w, me, cfg)?;
    Ok(after - autarky)
}

/// Split the population into buyers and sellers around a reference price.
pub fn classify(
    ps: &[Participant],
    cfg: &MarketConfig,
    rule: ClassifyRule,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let reference = match rule {
        ClassifyRule::CommonPoolPrice => clear_market(ps, cfg)?.q,
        ClassifyRule::MedianAutarky => {
            let mut prices = ps
                .iter()
                .map(|p| autarky_price(p, cfg))
                .collect::<Result<Vec<_>>>()?;
            prices.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = prices.len();
            if n % 2 == 1 {
                prices[n / 2]
            } else {
                0.5 * (prices[n / 2 - 1] + prices[n / 2])
            }
        }
    };
    let mut buyers = Vec::new();
    let mut sellers = Vec::new();
    for (idx, p) in ps.iter().enumerate() {
        // A participant whose autarky marginal exceeds the reference price
        // values water above the market and buys; ties sell.
        if autarky_price(p, cfg)? > reference {
            buyers.push(idx);
        } else {
            sellers.push(idx);
        }
    }
    Ok((buyers, sellers))
}

/// Rank each side of the market by own-utility gain from a bilateral deal
/// with each counterparty, descending; ties broken by identifier order.
pub fn build_preferences(
    ps: &[Participant],
    cfg: &MarketConfig,
    rule: ClassifyRule,
) -> Result<PreferenceTable> {
    let (buyers, sellers) = classify(ps, cfg, rule)?;
    if buyers.is_empty() || sellers.is_empty() {
        return Err(MarketError::Degenerate(format!(
            "one-sided market: {} buyers, {} sellers",
            buyers.len(),
            sellers.len()
        )));
    }

    let rank = |own: &[usize], others: &[usize]| -> Result<Vec<Vec<usize>>> {
        own.iter()
            .map(|&me| {
                let mut gains = others
                    .iter()
                    .enumerate()
                    .map(|(pos, &other)| Ok((pos, utility_gain(&ps[me], &ps[other], cfg)?)))
                    .collect::<Result<Vec<_>>>()?;
                gains.sort_by(|(pa, ga), (pb, gb)| {
                    gb.partial_cmp(ga)
                        .unwrap()
                        .then_with(|| ps[others[*pa]].id.cmp(&ps[others[*pb]].id))
                });
                Ok(gains.into_iter().map(|(pos, _)| pos).collect())
            })
            .collect()
    };

    Ok(PreferenceTable {
        buyer_prefs: rank(&buyers, &sellers)?,
        seller_prefs: rank(&sellers, &buyers)?,
        buyers,
        sellers,
    })
}

/// Buyer-proposing deferred acceptance with synchronized proposal rounds.
///
/// One stage: every currently free buyer proposes to its best seller that
/// has not yet rejected it; each seller keeps the best proposal seen so far.
pub fn deferred_acceptance(prefs: &PreferenceTable) -> Matching {
    let nb = prefs.buyers.len();
    let ns = prefs.sellers.len();

    // seller_rank[s][b] = position of buyer b in seller s's list.
    let seller_rank: Vec<Vec<usize>> = prefs
        .seller_prefs
        .iter()
        .map(|list| {
            let mut rank = vec![usize::MAX; nb];
            for (pos, &b) in list.iter().enumerate() {
                rank[b] = pos;
            }
            rank
        })
        .collect();

    let mut next = vec![0usize; nb];
    let mut held: Vec<Option<usize>> = vec![None; ns];
    let mut engaged = vec![false; nb];
    let mut stages = 0usize;

    loop {
        let mut proposals: Vec<(usize, usize)> = Vec::new();
        for b in 0..nb {
            if !engaged[b] && next[b] < ns {
                proposals.push((prefs.buyer_prefs[b][next[b]], b));
                next[b] += 1;
            }
        }
        if proposals.is_empty() {
            break;
        }
        stages += 1;
        for (s, b) in proposals {
            match held[s] {
                None => {
                    held[s] = Some(b);
                    engaged[b] = true;
                }
                Some(current) => {
                    if seller_rank[s][b] < seller_rank[s][current] {
                        engaged[current] = false;
                        held[s] = Some(b);
                        engaged[b] = true;
                    }
                }
            }
        }
    }

    let mut pairs = Vec::new();
    let mut matched_buyers = vec![false; nb];
    for (s, holder) in held.iter().enumerate() {
        if let Some(b) = holder {
            pairs.push((prefs.buyers[*b], prefs.sellers[s]));
            matched_buyers[*b] = true;
        }
    }
    pairs.sort_unstable();
    let mut unmatched: Vec<usize> = (0..nb)
        .filter(|&b| !matched_buyers[b])
        .map(|b| prefs.buyers[b])
        .collect();
    unmatched.extend(
        (0..ns).filter(|&s| held[s].is_none()).map(|s| prefs.sellers[s]),
    );
    unmatched.sort_unstable();

    Matching { pairs, unmatched, stages }
}

/// Exhaustive O(n^2) blocking-pair scan; `None` means the matching is stable.
pub fn find_blocking_pair(
    matching: &Matching,
    prefs: &PreferenceTable,
) -> Option<(usize, usize)> {
    let nb = prefs.buyers.len();
    let ns = prefs.sellers.len();
    let buyer_pos: std::collections::HashMap<usize, usize> =
        prefs.buyers.iter().enumerate().map(|(pos, &idx)| (idx, pos)).collect();
    let seller_pos: std::collections::HashMap<usize, usize> =
        prefs.sellers.iter().enumerate().map(|(pos, &idx)| (idx, pos)).collect();

    let mut buyer_match = vec![None; nb];
    let mut seller_match = vec![None; ns];
    for &(bi, si) in &matching.pairs {
        let b = buyer_pos[&bi];
        let s = seller_pos[&si];
        buyer_match[b] = Some(s);
        seller_match[s] = Some(b);
    }

    let rank_of = |list: &[usize], x: usize| list.iter().position(|&y| y == x).unwrap();

    for b in 0..nb {
        for s in 0..ns {
            if buyer_match[b] == Some(s) {
                continue;
            }
            let buyer_prefers = match buyer_match[b] {
                None => true,
                Some(cur) => {
                    rank_of(&prefs.buyer_prefs[b], s) < rank_of(&prefs.buyer_prefs[b], cur)
                }
            };
            let seller_prefers = match seller_match[s] {
                None => true,
                Some(cur) => {
                    rank_of(&prefs.seller_prefs[s], b) < rank_of(&prefs.seller_prefs[s], cur)
                }
            };
            if buyer_prefers && seller_prefers {
                return Some((prefs.buyers[b], prefs.sellers[s]));
            }
        }
    }
    None
}

/// Upper bound on proposal rounds for a market with side sizes `nb`, `ns`.
pub fn stage_bound(nb: usize, ns: usize) -> usize {
    let n = nb.max(ns);
    n * n + 2 - 2 * n
}

fn joint_surplus(
    pi: &Participant,
    pj: &Participant,
    cfg: &MarketConfig,
) -> Result<f64> {
    let deal = bilateral_clear(pi, pj, cfg)?;
    let after = total_utility(&deal.alloc_i, deal.q_tilde, pi, cfg)?
        + total_utility(&deal.alloc_j, deal.q_tilde, pj, cfg)?;
    let autarky =
        agricultural_utility(pi.w, pi, cfg)? + agricultural_utility(pj.w, pj, cfg)?;
    Ok(after - autarky)
}

/// One round of pair-wise trading over the whole population.
///
/// Pairs are formed per `strategy`, each pair clears bilaterally, the odd
/// participant (if any) stays in autarky. Uses the common-pool price as the
/// buyer/seller reference for the stable strategy; see
/// [`pairwise_market_with_rule`] for the alternative.
pub fn pairwise_market(
    ps: &[Participant],
    strategy: PairingStrategy,
    cfg: &MarketConfig,
    seed: u64,
) -> Result<PairwiseOutcome> {
    pairwise_market_with_rule(ps, strategy, cfg, seed, ClassifyRule::CommonPoolPrice)
}

pub fn pairwise_market_with_rule(
    ps: &[Participant],
    strategy: PairingStrategy,
    cfg: &MarketConfig,
    seed: u64,
    rule: ClassifyRule,
) -> Result<PairwiseOutcome> {
    let mut stages = None;
    let (pair_indices, mut unmatched) = match strategy {
        PairingStrategy::Random => {
            let mut order: Vec<usize> = (0..ps.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
            let mut pairs = Vec::new();
            for chunk in order.chunks(2) {
                if let [i, j] = *chunk {
                    pairs.push((i.min(j), i.max(j)));
                }
            }
            let leftover = if ps.len() % 2 == 1 { vec![*order.last().unwrap()] } else { vec![] };
            (pairs, leftover)
        }
        PairingStrategy::Greedy => {
            let n = ps.len();
            let mut surpluses = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    surpluses.push(((i, j), joint_surplus(&ps[i], &ps[j], cfg)?));
                }
            }
            let mut taken = vec![false; n];
            let mut pairs = Vec::new();
            loop {
                let best = surpluses
                    .iter()
                    .filter(|((i, j), _)| !taken[*i] && !taken[*j])
                    .max_by(|(ka, sa), (kb, sb)| {
                        sa.partial_cmp(sb).unwrap().then_with(|| kb.cmp(ka))
                    });
                match best {
                    Some(&((i, j), _)) => {
                        taken[i] = true;
                        taken[j] = true;
                        pairs.push((i, j));
                    }
                    None => break,
                }
            }
            pairs.sort_unstable();
            let leftover = (0..n).filter(|&i| !taken[i]).collect();
            (pairs, leftover)
        }
        PairingStrategy::Stable => match build_preferences(ps, cfg, rule) {
            Ok(prefs) => {
                let matching = deferred_acceptance(&prefs);
                stages = Some(matching.stages);
                (matching.pairs, matching.unmatched)
            }
            // One-sided market: nobody can trade, everyone stays in autarky.
            Err(MarketError::Degenerate(_)) => {
                stages = Some(0);
                (Vec::new(), (0..ps.len()).collect())
            }
            Err(e) => return Err(e),
        },
    };

    let mut deals = Vec::with_capacity(pair_indices.len());
    for &(i, j) in &pair_indices {
        deals.push(bilateral_clear(&ps[i], &ps[j], cfg)?);
    }

    let mut total_welfare = 0.0;
    for (&(i, j), deal) in pair_indices.iter().zip(&deals) {
        total_welfare += total_utility(&deal.alloc_i, deal.q_tilde, &ps[i], cfg)?;
        total_welfare += total_utility(&deal.alloc_j, deal.q_tilde, &ps[j], cfg)?;
    }
    unmatched.sort_unstable();
    for &i in &unmatched {
        total_welfare += agricultural_utility(ps[i].w, &ps[i], cfg)?;
    }

    Ok(PairwiseOutcome { deals, pair_indices, unmatched, total_welfare, strategy, stages })
}

/// All ways to split `n` (even) indices into unordered pairs; used by tests
/// and the exhaustive welfare-dominance checks.
pub fn enumerate_pairings(n: usize) -> Vec<Vec<(usize, usize)>> {
    fn go(remaining: &mut Vec<usize>, current: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if remaining.is_empty() {
            out.push(current.clone());
            return;
        }
        let first = remaining.remove(0);
        for k in 0..remaining.len() {
            let partner = remaining.remove(k);
            current.push((first, partner));
            go(remaining, current, out);
            current.pop();
            remaining.insert(k, partner);
        }
        remaining.insert(0, first);
    }
    let mut out = Vec::new();
    go(&mut (0..n).collect(), &mut Vec::new(), &mut out);
    out
}

/// Welfare of one explicit pairing, each pair clearing bilaterally.
pub fn pairing_welfare(
    ps: &[Participant],
    pairs: &[(usize, usize)],
    cfg: &MarketConfig,
) -> Result<f64> {
    let mut matched = vec![false; ps.len()];
    let mut welfare = 0.0;
    for &(i, j) in pairs {
        let deal = bilateral_clear(&ps[i], &ps[j], cfg)?;
        welfare += total_utility(&deal.alloc_i, deal.q_tilde, &ps[i], cfg)?;
        welfare += total_utility(&deal.alloc_j, deal.q_tilde, &ps[j], cfg)?;
        matched[i] = true;
        matched[j] = true;
    }
    for (i, p) in ps.iter().enumerate() {
        if !matched[i] {
            welfare += agricultural_utility(p.w, p, cfg)?;
        }
    }
    Ok(welfare)
}
