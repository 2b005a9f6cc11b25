//! Univariate polynomials in double and exact rational arithmetic.
//!
//! The double-precision [`Poly`] is the workhorse for evaluation inside
//! Monte Carlo loops and PDE right-hand sides. The exact [`RatPoly`] backs
//! everything that must be decided *exactly*: coefficient identities,
//! Sturm-sequence root isolation, and sign-definite integrals. Every f64 is
//! itself a rational number, so converting inputs with [`rat_from_f64`] is
//! lossless and the two representations agree by construction.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// f64 <-> exact rational bridges
// ---------------------------------------------------------------------------

/// Exact rational value of a finite f64 (every finite double is a dyadic
/// rational). Errors on NaN/infinity.
pub fn rat_from_f64(x: f64) -> Result<BigRational> {
    if !x.is_finite() {
        return Err(Error::DomainError(format!("cannot convert {x} to a rational")));
    }
    let bits = x.to_bits();
    let neg = bits >> 63 == 1;
    let biased = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mant, exp) = if biased == 0 {
        (frac, -1074i64)
    } else {
        (frac | (1u64 << 52), biased - 1075)
    };
    let mut num = BigInt::from(mant);
    if neg {
        num = -num;
    }
    Ok(if exp >= 0 {
        BigRational::from_integer(num << exp as u64)
    } else {
        BigRational::new(num, BigInt::one() << (-exp) as u64)
    })
}

/// Convenience constructor for small rationals.
pub fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Round a rational to the nearest f64 (ties to even up to one final
/// double rounding). Safe for arbitrarily large numerators/denominators.
pub fn rat_to_f64(x: &BigRational) -> f64 {
    if x.is_zero() {
        return 0.0;
    }
    let neg = x.is_negative();
    let a = x.numer().abs();
    let b = x.denom().clone();
    // Scale so the true quotient lies in [2^52, 2^53): the rounded integer
    // then fits a double exactly, avoiding a second rounding in to_f64.
    let scaled = |s: i64| -> (BigInt, BigInt) {
        if s >= 0 {
            (&a << s as u64, b.clone())
        } else {
            (a.clone(), &b << (-s) as u64)
        }
    };
    let mut shift = 53 - (a.bits() as i64 - b.bits() as i64);
    let (mut num, mut den) = scaled(shift);
    let (mut q, mut r) = num.div_rem(&den);
    if q.bits() > 53 {
        shift -= 1;
        let nd = scaled(shift);
        num = nd.0;
        den = nd.1;
        let qr = num.div_rem(&den);
        q = qr.0;
        r = qr.1;
    }
    let twice_r = r << 1u32;
    match twice_r.cmp(&den) {
        std::cmp::Ordering::Greater => q += 1,
        std::cmp::Ordering::Equal => {
            if q.is_odd() {
                q += 1;
            }
        }
        std::cmp::Ordering::Less => {}
    }
    let mut v = ldexp(q.to_f64().expect("quotient fits in f64"), -shift as i32);
    if neg {
        v = -v;
    }
    v
}

/// x * 2^e without overflowing or underflowing intermediate powers.
fn ldexp(x: f64, mut e: i32) -> f64 {
    let mut v = x;
    while e > 1000 {
        v *= 2.0_f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        v *= 2.0_f64.powi(-1000);
        e += 1000;
    }
    v * 2.0_f64.powi(e)
}

// ---------------------------------------------------------------------------
// Double-precision polynomial
// ---------------------------------------------------------------------------

/// Dense polynomial with ascending f64 coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && *coeffs.last().unwrap() == 0.0 {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Poly { coeffs }
    }

    pub fn zero() -> Self {
        Poly { coeffs: vec![0.0] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == 0.0)
    }

    /// Horner evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for c in self.coeffs.iter().rev() {
            acc = acc * x + c;
        }
        acc
    }

    pub fn derivative(&self) -> Poly {
        if self.coeffs.len() == 1 {
            return Poly::zero();
        }
        Poly::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, c)| i as f64 * c)
                .collect(),
        )
    }

    /// Antiderivative with zero constant term.
    pub fn antiderivative(&self) -> Poly {
        let mut out = vec![0.0];
        out.extend(
            self.coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| c / (i as f64 + 1.0)),
        );
        Poly::new(out)
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = vec![0.0; n];
        for (i, c) in self.coeffs.iter().enumerate() {
            out[i] += c;
        }
        for (i, c) in other.coeffs.iter().enumerate() {
            out[i] += c;
        }
        Poly::new(out)
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }
}

// ---------------------------------------------------------------------------
// Exact rational polynomial
// ---------------------------------------------------------------------------

/// Dense polynomial with ascending exact rational coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct RatPoly {
    coeffs: Vec<BigRational>,
}

impl RatPoly {
    pub fn new(mut coeffs: Vec<BigRational>) -> Self {
        while coeffs.len() > 1 && coeffs.last().unwrap().is_zero() {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(BigRational::zero());
        }
        RatPoly { coeffs }
    }

    pub fn zero() -> Self {
        RatPoly {
            coeffs: vec![BigRational::zero()],
        }
    }

    pub fn constant(c: BigRational) -> Self {
        RatPoly { coeffs: vec![c] }
    }

    /// The monomial x.
    pub fn x() -> Self {
        RatPoly {
            coeffs: vec![BigRational::zero(), BigRational::one()],
        }
    }

    /// Exact lift of f64 coefficients.
    pub fn from_f64_coeffs(coeffs: &[f64]) -> Result<Self> {
        Ok(RatPoly::new(
            coeffs.iter().map(|c| rat_from_f64(*c)).collect::<Result<_>>()?,
        ))
    }

    pub fn coeffs(&self) -> &[BigRational] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    pub fn leading(&self) -> &BigRational {
        self.coeffs.last().unwrap()
    }

    pub fn eval(&self, x: &BigRational) -> BigRational {
        let mut acc = BigRational::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc * x + c;
        }
        acc
    }

    pub fn derivative(&self) -> RatPoly {
        if self.coeffs.len() == 1 {
            return RatPoly::zero();
        }
        RatPoly::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, c)| c * BigRational::from_integer(BigInt::from(i)))
                .collect(),
        )
    }

    /// Antiderivative with zero constant term.
    pub fn antiderivative(&self) -> RatPoly {
        let mut out = vec![BigRational::zero()];
        out.extend(self.coeffs.iter().enumerate().map(|(i, c)| {
            c / BigRational::from_integer(BigInt::from(i as i64 + 1))
        }));
        RatPoly::new(out)
    }

    pub fn neg(&self) -> RatPoly {
        RatPoly::new(self.coeffs.iter().map(|c| -c).collect())
    }

    pub fn scale(&self, s: &BigRational) -> RatPoly {
        RatPoly::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn add(&self, other: &RatPoly) -> RatPoly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = vec![BigRational::zero(); n];
        for (i, c) in self.coeffs.iter().enumerate() {
            out[i] += c;
        }
        for (i, c) in other.coeffs.iter().enumerate() {
            out[i] += c;
        }
        RatPoly::new(out)
    }

    pub fn sub(&self, other: &RatPoly) -> RatPoly {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &RatPoly) -> RatPoly {
        let mut out =
            vec![BigRational::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        RatPoly::new(out)
    }

    /// Exact composition p(a + b*x).
    pub fn compose_affine(&self, a: &BigRational, b: &BigRational) -> RatPoly {
        // Horner in the affine argument: result = (...(c_n*(a+bx) + c_{n-1})*(a+bx)...)
        let arg = RatPoly::new(vec![a.clone(), b.clone()]);
        let mut acc = RatPoly::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc.mul(&arg).add(&RatPoly::constant(c.clone()));
        }
        acc
    }

    /// Exact Euclidean division: self = q * d + r with deg r < deg d.
    pub fn div_rem(&self, d: &RatPoly) -> (RatPoly, RatPoly) {
        assert!(!d.is_zero(), "polynomial division by zero");
        let dd = d.degree();
        let lead = d.leading().clone();
        let mut rem = self.coeffs.clone();
        let trim = |v: &mut Vec<BigRational>| {
            while v.len() > 1 && v.last().unwrap().is_zero() {
                v.pop();
            }
        };
        trim(&mut rem);
        if rem.len() <= dd || (rem.len() == 1 && rem[0].is_zero()) {
            return (RatPoly::zero(), RatPoly::new(rem));
        }
        let mut q = vec![BigRational::zero(); rem.len() - dd];
        while rem.len() > dd && !(rem.len() == 1 && rem[0].is_zero()) {
            let k = rem.len() - 1 - dd;
            let c = rem.last().unwrap() / &lead;
            q[k] = c.clone();
            for i in 0..=dd {
                let t = &c * &d.coeffs[i];
                rem[k + i] -= t;
            }
            // The leading term cancels exactly.
            rem.pop();
            trim(&mut rem);
            if rem.len() == 1 && rem[0].is_zero() {
                break;
            }
        }
        (RatPoly::new(q), RatPoly::new(rem))
    }

    /// Divide by a divisor known to divide exactly; panics on nonzero remainder.
    pub fn div_exact(&self, d: &RatPoly) -> RatPoly {
        let (q, r) = self.div_rem(d);
        assert!(r.is_zero(), "div_exact with nonzero remainder");
        q
    }

    /// Lower to double precision coefficients.
    pub fn to_poly(&self) -> Poly {
        Poly::new(self.coeffs.iter().map(rat_to_f64).collect())
    }

    /// Sign of the value at x: -1, 0, or +1.
    pub fn sign_at(&self, x: &BigRational) -> i32 {
        let v = self.eval(x);
        if v.is_zero() {
            0
        } else if v.is_positive() {
            1
        } else {
            -1
        }
    }
}

/// Monic gcd of two rational polynomials by the Euclidean algorithm.
pub fn rat_poly_gcd(a: &RatPoly, b: &RatPoly) -> RatPoly {
    let mut f = a.clone();
    let mut g = b.clone();
    while !g.is_zero() {
        let (_, r) = f.div_rem(&g);
        f = g;
        g = r;
    }
    if f.is_zero() {
        f
    } else {
        let inv = BigRational::one() / f.leading();
        f.scale(&inv)
    }
}

/// Square-free part p / gcd(p, p'), plus whether p was already square-free.
pub fn squarefree_part(p: &RatPoly) -> (RatPoly, bool) {
    if p.degree() == 0 {
        return (p.clone(), true);
    }
    let g = rat_poly_gcd(p, &p.derivative());
    if g.degree() == 0 {
        (p.clone(), true)
    } else {
        (p.div_exact(&g), false)
    }
}

// ---------------------------------------------------------------------------
// Sturm-sequence real root isolation
// ---------------------------------------------------------------------------

/// Sturm chain of a square-free polynomial.
pub struct SturmChain {
    chain: Vec<RatPoly>,
}

impl SturmChain {
    pub fn new(squarefree: &RatPoly) -> Self {
        let mut chain = vec![squarefree.clone(), squarefree.derivative()];
        loop {
            let n = chain.len();
            if chain[n - 1].is_zero() {
                chain.pop();
                break;
            }
            let (_, r) = chain[n - 2].div_rem(&chain[n - 1]);
            if r.is_zero() {
                break;
            }
            chain.push(r.neg());
        }
        SturmChain { chain }
    }

    fn variations_at(&self, x: &BigRational) -> usize {
        let mut count = 0;
        let mut last = 0;
        for p in &self.chain {
            let s = p.sign_at(x);
            if s != 0 {
                if last != 0 && s != last {
                    count += 1;
                }
                last = s;
            }
        }
        count
    }

    /// Number of distinct real roots in the half-open interval (lo, hi].
    pub fn roots_in(&self, lo: &BigRational, hi: &BigRational) -> usize {
        self.variations_at(lo) - self.variations_at(hi)
    }
}

/// An isolated real root: either known exactly or bracketed by an interval
/// containing exactly one root, with a sign change across it.
#[derive(Debug, Clone)]
pub enum IsolatedRoot {
    Exact(BigRational),
    Bracket(BigRational, BigRational),
}

/// Result of root isolation: the roots, plus the polynomial left after all
/// exact roots were deflated. Brackets refer to `deflated`, which is
/// guaranteed to change sign across each of them — refine against it, never
/// against the original polynomial (which may vanish at bracket endpoints).
pub struct Isolation {
    pub roots: Vec<IsolatedRoot>,
    pub deflated: RatPoly,
}

/// Isolate all real roots of a *square-free* polynomial inside [lo, hi].
/// Rational roots hit by the subdivision grid (endpoints included) are
/// reported exactly and deflated before the remaining roots are bracketed.
pub fn isolate_roots(p: &RatPoly, lo: &BigRational, hi: &BigRational) -> Result<Isolation> {
    if p.is_zero() {
        return Err(Error::DomainError("cannot isolate roots of the zero polynomial".into()));
    }
    let mut out = Vec::new();
    let mut q = p.clone();
    // Whenever the recursion lands on an exact root, deflate it and restart
    // with a fresh Sturm chain; the degree strictly drops, so this terminates.
    loop {
        if q.degree() == 0 {
            break;
        }
        for endpoint in [lo, hi] {
            if q.degree() >= 1 && q.sign_at(endpoint) == 0 {
                out.push(IsolatedRoot::Exact(endpoint.clone()));
                let lin = RatPoly::new(vec![-endpoint.clone(), BigRational::one()]);
                q = q.div_exact(&lin);
            }
        }
        if q.degree() == 0 {
            break;
        }
        let chain = SturmChain::new(&q);
        let mut brackets = Vec::new();
        match subdivide(&q, &chain, lo, hi, 0, &mut brackets)? {
            Some(exact) => {
                out.push(IsolatedRoot::Exact(exact.clone()));
                let lin = RatPoly::new(vec![-exact, BigRational::one()]);
                q = q.div_exact(&lin);
            }
            None => {
                out.extend(brackets);
                break;
            }
        }
    }
    sort_isolated(&mut out);
    Ok(Isolation {
        roots: out,
        deflated: q,
    })
}

fn sort_isolated(roots: &mut [IsolatedRoot]) {
    roots.sort_by(|a, b| root_key(a).partial_cmp(&root_key(b)).unwrap());
}

fn root_key(r: &IsolatedRoot) -> f64 {
    match r {
        IsolatedRoot::Exact(x) => rat_to_f64(x),
        IsolatedRoot::Bracket(a, b) => 0.5 * (rat_to_f64(a) + rat_to_f64(b)),
    }
}

/// Recursive bisection on Sturm counts. Returns `Some(root)` if the split
/// scan landed exactly on a root (caller deflates and restarts), otherwise
/// fills `out` with single-root brackets.
fn subdivide(
    q: &RatPoly,
    chain: &SturmChain,
    lo: &BigRational,
    hi: &BigRational,
    depth: usize,
    out: &mut Vec<IsolatedRoot>,
) -> Result<Option<BigRational>> {
    if depth > 200 {
        return Err(Error::DomainError(
            "root isolation exceeded maximum subdivision depth".into(),
        ));
    }
    let n = chain.roots_in(lo, hi);
    match n {
        0 => Ok(None),
        1 => {
            out.push(IsolatedRoot::Bracket(lo.clone(), hi.clone()));
            Ok(None)
        }
        _ => {
            // A root can sit exactly at the midpoint (e.g. 1/2); report it
            // for deflation rather than bisecting around a singular point.
            let m = (lo + hi) * rat(1, 2);
            if q.sign_at(&m) == 0 {
                return Ok(Some(m));
            }
            if let Some(r) = subdivide(q, chain, lo, &m, depth + 1, out)? {
                return Ok(Some(r));
            }
            subdivide(q, chain, &m, hi, depth + 1, out)
        }
    }
}

/// Refine an isolated root to a double with |error| < 1e-13 by exact
/// rational bisection on the sign change.
pub fn refine_root(p: &RatPoly, root: &IsolatedRoot) -> Result<f64> {
    match root {
        IsolatedRoot::Exact(x) => Ok(rat_to_f64(x)),
        IsolatedRoot::Bracket(a, b) => {
            let mut lo = a.clone();
            let mut hi = b.clone();
            let s_lo = p.sign_at(&lo);
            let s_hi = p.sign_at(&hi);
            if s_lo == 0 {
                return Ok(rat_to_f64(&lo));
            }
            if s_hi == 0 {
                return Ok(rat_to_f64(&hi));
            }
            if s_lo == s_hi {
                return Err(Error::DomainError(
                    "root bracket without sign change (multiple root?)".into(),
                ));
            }
            let target = rat(1, 1_000_000_000_000) * rat(1, 10); // 1e-13
            let half = rat(1, 2);
            while &hi - &lo > target {
                let mid = (&lo + &hi) * &half;
                match p.sign_at(&mid) {
                    0 => return Ok(rat_to_f64(&mid)),
                    s if s == s_lo => lo = mid,
                    _ => hi = mid,
                }
            }
            Ok(rat_to_f64(&((&lo + &hi) * &half)))
        }
    }
}

/// All real roots of p in [lo, hi] as refined doubles, with a flag set when
/// p has a repeated root in the interval (detected exactly via gcd(p, p')).
pub struct RealRoots {
    pub roots: Vec<f64>,
    pub has_repeated_in_interval: bool,
}

pub fn real_roots_in(p: &RatPoly, lo: f64, hi: f64) -> Result<RealRoots> {
    let lo_r = rat_from_f64(lo)?;
    let hi_r = rat_from_f64(hi)?;
    let (sf, was_squarefree) = squarefree_part(p);
    let mut has_repeated = false;
    if !was_squarefree {
        // Repeated factor somewhere; check whether it meets [lo, hi] on the
        // real line.
        let g = rat_poly_gcd(p, &p.derivative());
        let (gsf, _) = squarefree_part(&g);
        if gsf.degree() >= 1 {
            let reps = isolate_roots(&gsf, &lo_r, &hi_r)?;
            has_repeated = !reps.roots.is_empty();
        }
    }
    let isolation = isolate_roots(&sf, &lo_r, &hi_r)?;
    let mut roots = Vec::with_capacity(isolation.roots.len());
    for r in &isolation.roots {
        roots.push(refine_root(&isolation.deflated, r)?);
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(RealRoots {
        roots,
        has_repeated_in_interval: has_repeated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rp(coeffs: &[(i64, i64)]) -> RatPoly {
        RatPoly::new(coeffs.iter().map(|(n, d)| rat(*n, *d)).collect())
    }

    #[test]
    fn f64_rational_roundtrip_is_exact() {
        for x in [0.0, 1.0, -0.5, 1.0 / 3.0, 2.0 / 3.0, 1e-300, -123.456, 4.5e15] {
            let r = rat_from_f64(x).unwrap();
            assert_eq!(rat_to_f64(&r), x, "roundtrip of {x}");
        }
        // f64(2/3) is exactly twice f64(1/3): same mantissa, adjacent exponent.
        let third = rat_from_f64(1.0 / 3.0).unwrap();
        let two_thirds = rat_from_f64(2.0 / 3.0).unwrap();
        assert_eq!(&third * rat(2, 1), two_thirds);
        assert!(rat_from_f64(f64::NAN).is_err());
    }

    #[test]
    fn rat_to_f64_rounds_non_dyadics_correctly() {
        // Correct rounding (no double rounding) on values whose scaled
        // quotient needs 54-55 bits before normalization.
        assert_eq!(rat_to_f64(&rat(1, 3)), 1.0 / 3.0);
        assert_eq!(rat_to_f64(&rat(2, 3)), 2.0 / 3.0);
        assert_eq!(rat_to_f64(&rat(1, 10)), 0.1);
        assert_eq!(rat_to_f64(&rat(9, 11)), 9.0 / 11.0);
        assert_eq!(rat_to_f64(&rat(-5, 7)), -5.0 / 7.0);
        let big = BigInt::one() << 60u32;
        let x = BigRational::new(big.clone(), BigInt::from(3));
        assert_eq!(rat_to_f64(&x), 2.0_f64.powi(60) / 3.0);
        // Round-half-even at the 53-bit boundary: 2^53+1 ties down to 2^53,
        // 2^53+3 ties up to 2^53+4.
        assert_eq!(rat_to_f64(&rat(9007199254740993, 1)), 9007199254740992.0);
        assert_eq!(rat_to_f64(&rat(9007199254740995, 1)), 9007199254740996.0);
    }

    #[test]
    fn rat_to_f64_handles_huge_denominators() {
        // 1/3 with ~600-bit numerator and denominator.
        let big = BigInt::one() << 600u32;
        let x = BigRational::new(big.clone(), big * BigInt::from(3));
        assert!((rat_to_f64(&x) - 1.0 / 3.0).abs() < 1e-16);
        let y = BigRational::new(BigInt::from(-7), BigInt::one() << 700u32);
        let want = -7.0 * 2.0_f64.powi(-350) * 2.0_f64.powi(-350);
        assert_eq!(rat_to_f64(&y), want);
        // Below the subnormal range the conversion flushes to zero.
        let z = BigRational::new(BigInt::from(7), BigInt::one() << 1200u32);
        assert_eq!(rat_to_f64(&z), 0.0);
    }

    #[test]
    fn poly_eval_and_calculus() {
        let p = Poly::new(vec![1.0, -2.0, 3.0]); // 1 - 2x + 3x^2
        assert_eq!(p.eval(2.0), 1.0 - 4.0 + 12.0);
        assert_eq!(p.derivative().coeffs(), &[-2.0, 6.0]);
        let back = p.antiderivative().derivative();
        assert_eq!(back, p);
    }

    #[test]
    fn rat_poly_division_is_exact() {
        // (x - 1/2)(x - 1/3)(x + 2) expanded, divided back out.
        let f1 = rp(&[(-1, 2), (1, 1)]);
        let f2 = rp(&[(-1, 3), (1, 1)]);
        let f3 = rp(&[(2, 1), (1, 1)]);
        let p = f1.mul(&f2).mul(&f3);
        let (q, r) = p.div_rem(&f2);
        assert!(r.is_zero());
        assert_eq!(q, f1.mul(&f3));
        assert_eq!(rat_poly_gcd(&p, &f2).degree(), 1);
    }

    #[test]
    fn compose_affine_matches_direct_eval() {
        let p = rp(&[(1, 3), (0, 1), (-2, 1), (5, 7)]);
        let a = rat(1, 4);
        let b = rat(-3, 5);
        let q = p.compose_affine(&a, &b);
        for t in [rat(0, 1), rat(1, 2), rat(-7, 3)] {
            let direct = p.eval(&(&a + &b * &t));
            assert_eq!(q.eval(&t), direct);
        }
    }

    #[test]
    fn sturm_finds_known_roots() {
        // Roots at 0, 1/2, 1 — the classic fixed-point configuration.
        let p = rp(&[(0, 1), (1, 2), (-3, 2), (1, 1)]); // x(x-1/2)(x-1) = x^3 - 3/2 x^2 + 1/2 x
        let rr = real_roots_in(&p, 0.0, 1.0).unwrap();
        assert!(!rr.has_repeated_in_interval);
        assert_eq!(rr.roots.len(), 3);
        assert!((rr.roots[0] - 0.0).abs() < 1e-12);
        assert!((rr.roots[1] - 0.5).abs() < 1e-12);
        assert!((rr.roots[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sturm_detects_repeated_roots() {
        // (x - 1/2)^2 (x + 1)
        let lin = rp(&[(-1, 2), (1, 1)]);
        let p = lin.mul(&lin).mul(&rp(&[(1, 1), (1, 1)]));
        let rr = real_roots_in(&p, 0.0, 1.0).unwrap();
        assert!(rr.has_repeated_in_interval);
        assert_eq!(rr.roots.len(), 1);
        assert!((rr.roots[0] - 0.5).abs() < 1e-12);
        // Same repeated factor outside the window is not flagged.
        let rr2 = real_roots_in(&p, 0.6, 1.0).unwrap();
        assert!(!rr2.has_repeated_in_interval);
        assert!(rr2.roots.is_empty());
    }

    #[test]
    fn refine_reaches_1e12_on_irrational_roots() {
        // x^2 - 1/20 has root sqrt(0.05) ≈ 0.2236068 (the quintic's beta_0).
        let p = rp(&[(-1, 20), (0, 1), (1, 1)]);
        let rr = real_roots_in(&p, 0.0, 1.0).unwrap();
        assert_eq!(rr.roots.len(), 1);
        assert!((rr.roots[0] - 0.05_f64.sqrt()).abs() < 1e-13);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mul_then_eval_agrees(a in prop::collection::vec(-20i64..20, 1..5),
                                b in prop::collection::vec(-20i64..20, 1..5),
                                xn in -9i64..9) {
            let pa = RatPoly::new(a.iter().map(|n| rat(*n, 7)).collect());
            let pb = RatPoly::new(b.iter().map(|n| rat(*n, 3)).collect());
            let x = rat(xn, 4);
            let lhs = pa.mul(&pb).eval(&x);
            let rhs = pa.eval(&x) * pb.eval(&x);
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn isolation_recovers_planted_roots(ks in prop::collection::btree_set(1u32..40, 1..4)) {
            // Plant distinct roots k/40 in (0,1) and recover all of them.
            let roots: Vec<BigRational> = ks.iter().map(|k| rat(*k as i64, 40)).collect();
            let mut p = RatPoly::new(vec![BigRational::one()]);
            for r in &roots {
                p = p.mul(&RatPoly::new(vec![-r.clone(), BigRational::one()]));
            }
            let rr = real_roots_in(&p, 0.0, 1.0).unwrap();
            prop_assert_eq!(rr.roots.len(), roots.len());
            for (got, want) in rr.roots.iter().zip(roots.iter()) {
                prop_assert!((got - rat_to_f64(want)).abs() < 1e-12);
            }
        }
    }
}
