//! Semirings for the chart algorithms.
//!
//! All semirings here work on log-space values, so `times` is (componentwise)
//! addition. Impossible items are represented by the finite sentinel
//! [`NEG_INF`] and every addition saturates at it, which keeps masked cells
//! from ever producing NaN through `(-inf) - (-inf)`.

use std::fmt::Debug;

/// Log-space zero.
pub const NEG_INF: f64 = -1.0e300;

/// Anything at or below this is treated as impossible.
const IMPOSSIBLE: f64 = -1.0e299;

#[inline]
pub fn is_impossible(x: f64) -> bool {
    x <= IMPOSSIBLE
}

/// Addition that saturates at [`NEG_INF`].
#[inline]
pub fn sat_add(a: f64, b: f64) -> f64 {
    if is_impossible(a) || is_impossible(b) {
        NEG_INF
    } else {
        a + b
    }
}

/// `log(exp(a) + exp(b))`.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if is_impossible(a) {
        return if is_impossible(b) { NEG_INF } else { b };
    }
    if is_impossible(b) {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum(exp(xs)))`, or [`NEG_INF`] for an empty or all-impossible slice.
pub fn log_sum(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(NEG_INF, f64::max);
    if is_impossible(m) {
        return NEG_INF;
    }
    let s: f64 = xs
        .iter()
        .filter(|x| !is_impossible(**x))
        .map(|x| (x - m).exp())
        .sum();
    m + s.ln()
}

/// A commutative semiring over log-potentials.
pub trait Semiring {
    type Elem: Copy + Debug;

    fn zero() -> Self::Elem;
    fn one() -> Self::Elem;
    fn plus(a: Self::Elem, b: Self::Elem) -> Self::Elem;
    fn times(a: Self::Elem, b: Self::Elem) -> Self::Elem;

    /// n-ary `plus`.
    fn sum(terms: &[Self::Elem]) -> Self::Elem {
        terms
            .iter()
            .fold(Self::zero(), |acc, &t| Self::plus(acc, t))
    }

    /// Lifts a score (log-potential) into the semiring.
    fn weight(w: f64) -> Self::Elem;

    /// The factor applied to a penalized item.
    fn penalty(c: f64) -> Self::Elem;

    /// Combines the channel scores of one span into its span weight.
    fn combine_channels(values: &[f64]) -> f64;

    fn is_zero(a: &Self::Elem) -> bool;
}

/// A semiring whose `plus` can be differentiated, for reverse accumulation.
///
/// Because `times` is addition in log-space, the adjoint of a product passes
/// unchanged to each factor; only the `plus` nodes need a rule.
pub trait Differentiable: Semiring {
    type Adj: Copy + Debug + Default;

    fn accumulate(into: &mut Self::Adj, g: Self::Adj);

    /// Adjoint of one term of an n-ary sum, given the sum's value and adjoint.
    fn term_adjoint(term: Self::Elem, total: Self::Elem, g: Self::Adj) -> Self::Adj;

    /// Derivative with respect to `w` of an item lifted by `weight(w)`.
    fn weight_grad(g: Self::Adj) -> f64;

    fn adj_is_zero(g: &Self::Adj) -> bool;
}

/// Log-sum-exp / plus: partition functions and marginals.
#[derive(Clone, Copy, Debug)]
pub struct LogSemiring;

impl Semiring for LogSemiring {
    type Elem = f64;

    fn zero() -> f64 {
        NEG_INF
    }

    fn one() -> f64 {
        0.0
    }

    #[inline]
    fn plus(a: f64, b: f64) -> f64 {
        log_add(a, b)
    }

    #[inline]
    fn times(a: f64, b: f64) -> f64 {
        sat_add(a, b)
    }

    #[inline]
    fn sum(terms: &[f64]) -> f64 {
        log_sum(terms)
    }

    #[inline]
    fn weight(w: f64) -> f64 {
        if is_impossible(w) {
            NEG_INF
        } else {
            w
        }
    }

    fn penalty(c: f64) -> f64 {
        -c
    }

    fn combine_channels(values: &[f64]) -> f64 {
        log_sum(values)
    }

    fn is_zero(a: &f64) -> bool {
        is_impossible(*a)
    }
}

impl Differentiable for LogSemiring {
    type Adj = f64;

    #[inline]
    fn accumulate(into: &mut f64, g: f64) {
        *into += g;
    }

    #[inline]
    fn term_adjoint(term: f64, total: f64, g: f64) -> f64 {
        if g == 0.0 || is_impossible(term) || is_impossible(total) {
            0.0
        } else {
            g * (term - total).exp()
        }
    }

    fn weight_grad(g: f64) -> f64 {
        g
    }

    fn adj_is_zero(g: &f64) -> bool {
        *g == 0.0
    }
}

/// Max / plus: Viterbi scores.
///
/// `plus` keeps the left operand on ties, so folds prefer earlier terms.
#[derive(Clone, Copy, Debug)]
pub struct MaxSemiring;

impl Semiring for MaxSemiring {
    type Elem = f64;

    fn zero() -> f64 {
        NEG_INF
    }

    fn one() -> f64 {
        0.0
    }

    #[inline]
    fn plus(a: f64, b: f64) -> f64 {
        if b > a {
            b
        } else {
            a
        }
    }

    #[inline]
    fn times(a: f64, b: f64) -> f64 {
        sat_add(a, b)
    }

    #[inline]
    fn weight(w: f64) -> f64 {
        if is_impossible(w) {
            NEG_INF
        } else {
            w
        }
    }

    fn penalty(c: f64) -> f64 {
        -c
    }

    fn combine_channels(values: &[f64]) -> f64 {
        values.iter().copied().fold(NEG_INF, Self::plus)
    }

    fn is_zero(a: &f64) -> bool {
        is_impossible(*a)
    }
}

/// Element of the log-space first-order expectation semiring used for
/// `KL(q || p)` between a penalized distribution `q` and the plain one `p`.
///
/// `log_q` and `log_p` are log-sums of the two unnormalized tree weights;
/// `expect` is the `q`-expectation (normalized within the element) of the
/// per-tree log-ratio `log q~(T) - log p~(T)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlElem {
    pub log_q: f64,
    pub log_p: f64,
    pub expect: f64,
}

impl KlElem {
    /// `KL(q || p)` for the normalized distributions.
    pub fn divergence(&self) -> f64 {
        self.expect - self.log_q + self.log_p
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KlAdj {
    pub log_q: f64,
    pub log_p: f64,
    pub expect: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct KlSemiring;

impl Semiring for KlSemiring {
    type Elem = KlElem;

    fn zero() -> KlElem {
        KlElem {
            log_q: NEG_INF,
            log_p: NEG_INF,
            expect: 0.0,
        }
    }

    fn one() -> KlElem {
        KlElem {
            log_q: 0.0,
            log_p: 0.0,
            expect: 0.0,
        }
    }

    fn plus(a: KlElem, b: KlElem) -> KlElem {
        Self::sum(&[a, b])
    }

    #[inline]
    fn times(a: KlElem, b: KlElem) -> KlElem {
        if is_impossible(a.log_q) || is_impossible(b.log_q) {
            return Self::zero();
        }
        KlElem {
            log_q: a.log_q + b.log_q,
            log_p: sat_add(a.log_p, b.log_p),
            expect: a.expect + b.expect,
        }
    }

    fn sum(terms: &[KlElem]) -> KlElem {
        let mq = terms.iter().map(|t| t.log_q).fold(NEG_INF, f64::max);
        if is_impossible(mq) {
            return Self::zero();
        }
        let mp = terms.iter().map(|t| t.log_p).fold(NEG_INF, f64::max);
        let mut sq = 0.0;
        let mut sp = 0.0;
        let mut se = 0.0;
        for t in terms {
            if is_impossible(t.log_q) {
                continue;
            }
            let wq = (t.log_q - mq).exp();
            sq += wq;
            se += wq * t.expect;
            if !is_impossible(t.log_p) {
                sp += (t.log_p - mp).exp();
            }
        }
        KlElem {
            log_q: mq + sq.ln(),
            log_p: mp + sp.ln(),
            expect: se / sq,
        }
    }

    #[inline]
    fn weight(w: f64) -> KlElem {
        if is_impossible(w) {
            Self::zero()
        } else {
            KlElem {
                log_q: w,
                log_p: w,
                expect: 0.0,
            }
        }
    }

    fn penalty(c: f64) -> KlElem {
        KlElem {
            log_q: -c,
            log_p: 0.0,
            expect: -c,
        }
    }

    fn combine_channels(values: &[f64]) -> f64 {
        log_sum(values)
    }

    fn is_zero(a: &KlElem) -> bool {
        is_impossible(a.log_q)
    }
}

impl Differentiable for KlSemiring {
    type Adj = KlAdj;

    #[inline]
    fn accumulate(into: &mut KlAdj, g: KlAdj) {
        into.log_q += g.log_q;
        into.log_p += g.log_p;
        into.expect += g.expect;
    }

    #[inline]
    fn term_adjoint(term: KlElem, total: KlElem, g: KlAdj) -> KlAdj {
        if is_impossible(term.log_q) || is_impossible(total.log_q) {
            return KlAdj::default();
        }
        let pi = (term.log_q - total.log_q).exp();
        let rho = if is_impossible(term.log_p) {
            0.0
        } else {
            (term.log_p - total.log_p).exp()
        };
        KlAdj {
            log_q: g.log_q * pi + g.expect * pi * (term.expect - total.expect),
            log_p: g.log_p * rho,
            expect: g.expect * pi,
        }
    }

    fn weight_grad(g: KlAdj) -> f64 {
        g.log_q + g.log_p
    }

    fn adj_is_zero(g: &KlAdj) -> bool {
        g.log_q == 0.0 && g.log_p == 0.0 && g.expect == 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_handles_sentinels() {
        assert_eq!(log_add(NEG_INF, NEG_INF), NEG_INF);
        assert_eq!(log_add(NEG_INF, 1.5), 1.5);
        assert!((log_add(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(sat_add(NEG_INF, NEG_INF), NEG_INF);
        assert_eq!(sat_add(NEG_INF, 1e10), NEG_INF);
    }

    #[test]
    fn log_sum_matches_pairwise() {
        let xs = [0.3, -1.2, 2.5, NEG_INF, 0.0];
        let pair = xs.iter().fold(NEG_INF, |a, &b| log_add(a, b));
        assert!((log_sum(&xs) - pair).abs() < 1e-12);
        assert_eq!(log_sum(&[]), NEG_INF);
        assert_eq!(log_sum(&[NEG_INF, NEG_INF]), NEG_INF);
    }

    #[test]
    fn max_prefers_earlier_term_on_ties() {
        let terms = [1.0, 3.0, 3.0];
        assert_eq!(MaxSemiring::sum(&terms), 3.0);
        assert_eq!(MaxSemiring::plus(NEG_INF, NEG_INF), NEG_INF);
    }

    #[test]
    fn kl_sum_is_associative() {
        let a = KlSemiring::times(KlSemiring::weight(0.3), KlSemiring::penalty(0.4));
        let b = KlSemiring::weight(-0.7);
        let c = KlSemiring::times(KlSemiring::weight(1.1), KlSemiring::penalty(0.4));
        let flat = KlSemiring::sum(&[a, b, c]);
        let nested = KlSemiring::plus(KlSemiring::plus(a, b), c);
        assert!((flat.log_q - nested.log_q).abs() < 1e-14);
        assert!((flat.log_p - nested.log_p).abs() < 1e-14);
        assert!((flat.expect - nested.expect).abs() < 1e-14);
    }

    #[test]
    fn kl_of_explicit_two_point_distribution() {
        // trees with scores 0.5 (penalized once) and -0.2 (unpenalized)
        let c = 0.4;
        let t1 = KlSemiring::times(KlSemiring::weight(0.5), KlSemiring::penalty(c));
        let t2 = KlSemiring::weight(-0.2);
        let total = KlSemiring::sum(&[t1, t2]);
        let zp = (0.5f64).exp() + (-0.2f64).exp();
        let zq = (0.5f64 - c).exp() + (-0.2f64).exp();
        let q = [(0.5f64 - c).exp() / zq, (-0.2f64).exp() / zq];
        let p = [(0.5f64).exp() / zp, (-0.2f64).exp() / zp];
        let kl: f64 = q.iter().zip(&p).map(|(a, b)| a * (a / b).ln()).sum();
        assert!((total.divergence() - kl).abs() < 1e-14);
    }
}
