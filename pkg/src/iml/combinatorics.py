"""Counting identities for nonnegative integer-valued measures on finite sets.

Measures are :class:`collections.Counter` objects mapping points to
nonnegative integer masses.  Everything here is exact integer arithmetic.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from itertools import permutations, product

import numpy as np

from .errors import BadContainment, MassMismatch, RLargerThanA, TooLarge

BRUTE_FORCE_LIMIT = 10**6


def canonical(measure) -> tuple:
    """Sorted ``(point, mass)`` pairs with zero masses dropped."""
    return tuple(sorted((x, int(c)) for x, c in Counter(measure).items() if c))


def measure_of(points) -> Counter:
    return Counter(points)


def mass(measure) -> int:
    return sum(Counter(measure).values())


def marginal(A, i) -> Counter:
    out = Counter()
    for x, c in A.items():
        out[x[i]] += c
    return out


@dataclass(frozen=True)
class CountingInstance:
    """Data for the bijection-tuple count.

    ``labels[i]`` maps every index of the ambient set T to a letter of X;
    ``F_prime[i]`` is the target of the i-th bijection; ``A`` and ``r`` are
    measures on p-tuples of letters.
    """

    X: tuple
    p: int
    S1_star: tuple
    S2_star: tuple
    F_prime: tuple
    labels: tuple
    A: Counter
    r: Counter

    @property
    def S_star(self) -> tuple:
        return self.S1_star + self.S2_star

    def validate(self) -> None:
        s = len(self.S_star)
        if set(self.S1_star) & set(self.S2_star):
            raise ValueError("S1* and S2* must be disjoint")
        if len(self.F_prime) != self.p or len(self.labels) != self.p:
            raise ValueError("need p target sets and p labelings")
        if any(len(set(F)) != s for F in self.F_prime):
            raise MassMismatch("every F'_i must have #S* elements")
        if mass(self.A) != s:
            raise MassMismatch(f"A has mass {mass(self.A)}, expected {s}")
        if mass(self.r) != len(self.S1_star):
            raise MassMismatch(f"r has mass {mass(self.r)}, expected {len(self.S1_star)}")
        if any(c > self.A.get(x, 0) for x, c in self.r.items()):
            raise RLargerThanA("r must satisfy r <= A pointwise")
        if any(c < 0 for c in list(self.A.values()) + list(self.r.values())):
            raise ValueError("negative mass")


def count_psi_closed_form(inst: CountingInstance):
    """Closed-form size of the bijection-tuple set (valid when it is nonempty).

    ``#S1*! #S2*! prod_i prod_x A_i(x)! / prod_x A(x)! prod_x C(A(x), r(x))``.
    Returns an ``int`` when the value is integral, otherwise the exact
    ``Fraction`` (which only happens for empty sets).
    """
    inst.validate()
    num = math.factorial(len(inst.S1_star)) * math.factorial(len(inst.S2_star))
    for i in range(inst.p):
        for c in marginal(inst.A, i).values():
            num *= math.factorial(c)
    den = 1
    for x, c in inst.A.items():
        den *= math.factorial(c)
        num *= math.comb(c, inst.r.get(x, 0))
    val = Fraction(num, den)
    return int(val) if val.denominator == 1 else val


def count_psi_tilde_closed_form(inst: CountingInstance, W, F=None):
    """Closed form for bijections ``W_i -> F_i`` whose restriction to S* lands on F'_i:
    the plain count times ``prod_i #(W_i minus S*)!``."""
    S = set(inst.S_star)
    if len(W) != inst.p:
        raise BadContainment("need one W_i per process")
    for i, Wi in enumerate(W):
        if not S <= set(Wi):
            raise BadContainment(f"S* not contained in W_{i}")
        if F is not None:
            if len(set(F[i])) != len(set(Wi)):
                raise BadContainment(f"#W_{i} != #F_{i}")
            if not set(inst.F_prime[i]) <= set(F[i]):
                raise BadContainment(f"F'_{i} not contained in F_{i}")
    base = count_psi_closed_form(inst)
    extra = 1
    for Wi in W:
        extra *= math.factorial(len(set(Wi)) - len(S))
    return base * extra


def _tuple_measure(inst, sigmas, idx):
    return Counter(tuple(inst.labels[i][sigmas[i][j]] for i in range(inst.p)) for j in idx)


def enumerate_psi_bruteforce(inst: CountingInstance, max_witnesses: int = 10):
    """Exhaustive count over all tuples of bijections ``S* -> F'_i``.

    Returns ``(count, witnesses)``; each witness is a tuple of dicts
    ``{j: sigma_i(j)}``.
    """
    inst.validate()
    S = inst.S_star
    s = len(S)
    if math.factorial(s) ** inst.p > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"({s}!)^{inst.p} bijection tuples")
    target_A = canonical(inst.A)
    target_r = canonical(inst.r)
    per_process = [[dict(zip(S, img)) for img in permutations(inst.F_prime[i])] for i in range(inst.p)]
    count = 0
    witnesses = []
    for sigmas in product(*per_process):
        if canonical(_tuple_measure(inst, sigmas, inst.S1_star)) != target_r:
            continue
        if canonical(_tuple_measure(inst, sigmas, S)) != target_A:
            continue
        count += 1
        if len(witnesses) < max_witnesses:
            witnesses.append(sigmas)
    return count, witnesses


def _codes(inst, images, positions, i):
    """Letter index of ``labels[i][image[j]]`` for each bijection and position."""
    letter = {x: n for n, x in enumerate(inst.X)}
    return np.array([[letter[inst.labels[i][img[j]]] for j in positions] for img in images], dtype=np.int64)


def _count_product(inst, codes, restrict):
    """Vectorized exhaustive count over the product of per-process candidates.

    ``codes[i]`` has shape ``(n_i, #S*)`` with positions ordered as S1* then
    S2*; ``restrict[i]`` masks admissible bijections of process i.
    """
    base = len(inst.X)
    letter = {x: n for n, x in enumerate(inst.X)}
    s1 = len(inst.S1_star)

    def enc(pt):
        return sum(letter[pt[i]] * base**i for i in range(inst.p))

    target_r = np.sort([enc(x) for x, c in inst.r.items() for _ in range(c)]).astype(np.int64)
    rest = inst.A - inst.r
    target_2 = np.sort([enc(x) for x, c in rest.items() for _ in range(c)]).astype(np.int64)
    total = 1
    for c in codes:
        total *= c.shape[0]
    if total > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"{total} bijection tuples")
    s = codes[0].shape[1]
    if s == 0:
        ok = np.ones(1, dtype=bool)
        for msk in restrict:
            ok = (ok[..., None] & msk).reshape(-1)
        return int(ok.sum())
    comb = np.zeros((1, s), dtype=np.int64)
    ok = np.ones(1, dtype=bool)
    for i, (c, msk) in enumerate(zip(codes, restrict)):
        comb = (comb[:, None, :] + c[None, :, :] * base**i).reshape(-1, s)
        ok = (ok[:, None] & msk[None, :]).reshape(-1)
    comb = comb[ok]
    a = np.sort(comb[:, :s1], axis=1)
    b = np.sort(comb[:, s1:], axis=1)
    good = np.all(a == target_r, axis=1) & np.all(b == target_2, axis=1)
    return int(good.sum())


def count_psi_bruteforce(inst: CountingInstance) -> int:
    """Same count as :func:`enumerate_psi_bruteforce`, vectorized over tuples."""
    inst.validate()
    S = inst.S_star
    codes, masks = [], []
    for i in range(inst.p):
        imgs = [dict(zip(S, img)) for img in permutations(inst.F_prime[i])]
        codes.append(_codes(inst, imgs, S, i).reshape(len(imgs), len(S)))
        masks.append(np.ones(len(imgs), dtype=bool))
    return _count_product(inst, codes, masks)


def count_psi_tilde_bruteforce(inst: CountingInstance, W, F, fix_images: bool = True) -> int:
    """Exhaustive count over tuples of bijections ``W_i -> F_i``.

    With ``fix_images`` only bijections mapping S* onto F'_i are counted;
    without it the image of S* is free (the literal set, which in general
    sums the fixed-image count over every admissible choice of F'_i).
    """
    inst.validate()
    S = inst.S_star
    codes, masks = [], []
    for i in range(inst.p):
        Wi = tuple(W[i])
        if len(set(Wi)) != len(set(F[i])) or not set(S) <= set(Wi):
            raise BadContainment(f"bad W_{i} / F_{i}")
        imgs = [dict(zip(Wi, img)) for img in permutations(tuple(F[i]))]
        c = _codes(inst, imgs, S, i).reshape(len(imgs), len(S))
        if fix_images:
            target = set(inst.F_prime[i])
            msk = np.array([{img[j] for j in S} == target for img in imgs], dtype=bool)
        else:
            msk = np.ones(len(imgs), dtype=bool)
        codes.append(c)
        masks.append(msk)
    return _count_product(inst, codes, masks)


def random_instance(rng, p_max=3, s_max=4, x_max=3, feasible_prob=0.8, t_extra=2):
    """Random valid instance; with probability ``feasible_prob`` A and r are
    induced by an actual bijection tuple, so the set is nonempty."""
    p = int(rng.integers(1, p_max + 1))
    s = int(rng.integers(0, s_max + 1))
    X = tuple(range(int(rng.integers(1, x_max + 1))))
    T = tuple(range(s + int(rng.integers(0, t_extra + 1))))
    S = tuple(int(v) for v in rng.permutation(len(T))[:s])
    s1 = int(rng.integers(0, s + 1))
    S1, S2 = S[:s1], S[s1:]
    F_prime = tuple(tuple(int(v) for v in rng.permutation(len(T))[:s]) for _ in range(p))
    labels = tuple({j: X[int(rng.integers(len(X)))] for j in T} for _ in range(p))
    if rng.random() < feasible_prob:
        sig = [dict(zip(S, (F_prime[i][v] for v in rng.permutation(s)))) for i in range(p)]
        pts = {j: tuple(labels[i][sig[i][j]] for i in range(p)) for j in S}
    else:
        pts = {j: tuple(X[int(rng.integers(len(X)))] for _ in range(p)) for j in S}
    A = Counter(pts[j] for j in S)
    r = Counter(pts[j] for j in S1)
    return CountingInstance(X, p, S1, S2, F_prime, labels, A, r)


def extend_instance(inst: CountingInstance, rng, extra_max=2, limit=10**5):
    """Attach W_i superset of S* and F_i superset of F'_i with equal sizes,
    relabelling so that the ambient index set grows as needed."""
    S = inst.S_star
    while True:
        extras = [int(rng.integers(0, extra_max + 1)) for _ in range(inst.p)]
        size = 1
        for e in extras:
            size *= math.factorial(len(S) + e)
        if size <= limit:
            break
    T0 = max([j for lab in inst.labels for j in lab] + [-1]) + 1
    labels = [dict(lab) for lab in inst.labels]
    W, F = [], []
    nxt = T0
    for i, e in enumerate(extras):
        new = list(range(nxt, nxt + e))
        nxt += e
        W.append(tuple(S) + tuple(new))
        spare = [j for j in labels[i] if j not in set(inst.F_prime[i])]
        rng.shuffle(spare)
        take = spare[:e]
        while len(take) < e:
            take.append(nxt)
            nxt += 1
        F.append(tuple(inst.F_prime[i]) + tuple(take))
    for lab in labels:
        for j in range(T0, nxt):
            lab.setdefault(j, inst.X[int(rng.integers(len(inst.X)))])
    inst2 = CountingInstance(inst.X, inst.p, inst.S1_star, inst.S2_star, inst.F_prime, tuple(labels), inst.A, inst.r)
    return inst2, tuple(W), tuple(F)


# --- elementary identities ----------------------------------------------------


def submeasures(pi) -> list:
    """All integer measures rho <= pi (as Counters)."""
    pts = sorted(Counter(pi))
    out = []
    for masses in product(*(range(pi[x] + 1) for x in pts)):
        out.append(Counter({x: c for x, c in zip(pts, masses) if c}))
    return out


def sum_over_submeasures_identity(pi, f):
    """``(sum_{rho <= pi} prod_x f(pi(x), rho(x)), prod_x sum_s f(pi(x), s))``."""
    pi = Counter(pi)
    lhs = 0
    for rho in submeasures(pi):
        term = 1
        for x in pi:
            term *= f(pi[x], rho.get(x, 0))
        lhs += term
    rhs = 1
    for x in pi:
        rhs *= sum(f(pi[x], s) for s in range(pi[x] + 1))
    return lhs, rhs


def _guard(n):
    if n > 8:
        raise TooLarge(f"list length {n} > 8")


def enumerate_fixed_mass_submeasures(b_list, m: int):
    """``(by definition, by permutation)``: the submeasures of
    ``pi = sum delta_{b_i}`` of mass m, computed both directly and as
    ``{sum_{i<m} delta_{b_sigma(i)}}``; each is a sorted tuple of canonical measures."""
    _guard(len(b_list))
    pi = Counter(b_list)
    direct = {canonical(r) for r in submeasures(pi) if mass(r) == m}
    via_perm = {canonical(Counter(b_list[s] for s in sig[:m])) for sig in permutations(range(len(b_list)))}
    return tuple(sorted(direct)), tuple(sorted(via_perm))


def enumerate_couplings(pairs):
    """``(by definition, by permutation)`` for integer couplings of the two
    marginals of ``sum delta_{(a_i, b_i)}``."""
    _guard(len(pairs))
    a = [x for x, _ in pairs]
    b = [y for _, y in pairs]
    ma, mb = Counter(a), Counter(b)
    cells = sorted({(x, y) for x in ma for y in mb})
    direct = set()

    def rec(k, cur, rowleft, colleft):
        if k == len(cells):
            if not any(rowleft.values()) and not any(colleft.values()):
                direct.add(canonical(cur))
            return
        x, y = cells[k]
        for c in range(min(rowleft[x], colleft[y]) + 1):
            rowleft[x] -= c
            colleft[y] -= c
            cur[(x, y)] = c
            rec(k + 1, cur, rowleft, colleft)
            rowleft[x] += c
            colleft[y] += c
        cur[(x, y)] = 0

    rec(0, Counter(), Counter(ma), Counter(mb))
    via_perm = {canonical(Counter((a[i], b[s]) for i, s in enumerate(sig))) for sig in permutations(range(len(pairs)))}
    return tuple(sorted(direct)), tuple(sorted(via_perm))


def chain_sequence_count_bound(A, x_end, alphabet=None):
    """``(lhs, rhs)`` for sequences with prescribed transition counts.

    lhs counts ``(x_1, ..., x_n)`` with ``sum_j delta_{(x_j, x_{j+1})} = A``
    given ``x_{n+1} = x_end``; rhs is ``n prod_l Abar(l)! / prod_l A(l)!``
    with ``n = A(X^2)`` standing in for the unnamed prefactor and ``Abar``
    the first marginal.
    """
    A = Counter({k: v for k, v in Counter(A).items() if v})
    n = mass(A)
    if alphabet is None:
        alphabet = sorted({x for e in A for x in e} | {x_end})
    if n > 8 or len(alphabet) > 4:
        raise TooLarge("need A(X^2) <= 8 and |X| <= 4")
    target = canonical(A)
    lhs = 0
    for seq in product(alphabet, repeat=n):
        full = seq + (x_end,)
        if canonical(Counter(zip(full[:-1], full[1:]))) == target:
            lhs += 1
    abar = marginal(A, 0)
    num = n
    for c in abar.values():
        num *= math.factorial(c)
    den = 1
    for c in A.values():
        den *= math.factorial(c)
    return lhs, Fraction(num, den)


def fuzz(trials: int = 1000, seed: int = 0, p_max: int = 3, s_max: int = 4, x_max: int = 3, extra_max: int = 2) -> dict:
    """Closed form vs brute force on random instances (plain and W-extended)."""
    rng = np.random.default_rng(seed)
    report = {"trials": trials, "seed": seed, "nonempty": 0, "mismatches": 0,
              "tilde_nonempty": 0, "tilde_mismatches": 0, "examples": []}
    for n in range(trials):
        inst = random_instance(rng, p_max, s_max, x_max)
        bf = count_psi_bruteforce(inst)
        if bf > 0:
            report["nonempty"] += 1
            cf = count_psi_closed_form(inst)
            if cf != bf:
                report["mismatches"] += 1
                if len(report["examples"]) < 5:
                    report["examples"].append({"trial": n, "kind": "plain", "closed": str(cf), "brute": bf})
        inst2, W, F = extend_instance(inst, rng, extra_max)
        bt = count_psi_tilde_bruteforce(inst2, W, F)
        if bt > 0:
            report["tilde_nonempty"] += 1
            ct = count_psi_tilde_closed_form(inst2, W, F)
            if ct != bt:
                report["tilde_mismatches"] += 1
                if len(report["examples"]) < 5:
                    report["examples"].append({"trial": n, "kind": "tilde", "closed": str(ct), "brute": bt})
    report["pass"] = report["mismatches"] == 0 and report["tilde_mismatches"] == 0
    return report
