"""Decision policies for the executor.

Three families:

* sequential: score every eligible (activity, mode) pair with the ordering
  tree and start the single best one;
* knee group: rank the pairs, keep one mode per activity, cut the ranking at
  its knee, enumerate the subsets of the surviving pairs and let the group
  tree pick the winner;
* full enumeration: consider every skip-or-mode assignment of the eligible
  activities, which is exact and explodes combinatorially.

Lower scores always win, for pairs and for groups alike.
"""
from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, replace
from typing import Sequence

from .rules import DecisionContext, Node, Pair, RulePair, eval_group_priority, eval_pair_priority

POLICY_NAMES = ("sgp", "ggp", "kggp-max", "kggp-all")

DEFAULT_ENUMERATION_LIMIT = 1_000_000


class EnumerationOverflowError(RuntimeError):
    """Exhaustive enumeration would exceed the configured bound."""

    def __init__(self, count: int, limit: int):
        super().__init__(f"enumeration needs {count} candidates, limit is {limit}")
        self.count = count
        self.limit = limit


@dataclass(frozen=True)
class KneeConfig:
    """Tuning of the knee group policy.

    `cap` bounds how many promising pairs are enumerated, `apply_knee` can
    switch the knee cut off for exhaustive comparisons, and
    `group_size_hard_limit` caps the subset count as a safety net.
    """

    cap: int = 10
    retain_maximal_only: bool = True
    group_size_hard_limit: int = DEFAULT_ENUMERATION_LIMIT
    apply_knee: bool = True

    def __post_init__(self):
        if self.cap < 1:
            raise ValueError("cap must be at least 1")
        if self.group_size_hard_limit < 1:
            raise ValueError("hard limit must be at least 1")


def sequential_decide(ordering: Node, ctx: DecisionContext,
                      eligible: Sequence[Pair]) -> Pair:
    """Best single pair; ties break on (activity id, mode index)."""
    if not eligible:
        raise ValueError("eligible set is empty")
    return min(
        eligible,
        key=lambda p: (eval_pair_priority(ordering, ctx, p), p[0], p[1]),
    )


def knee_index(values: Sequence[float]) -> int:
    """Index of the knee of an ascending curve.

    Points (k, values[k]) are min-max normalized to the unit square; the knee
    is the point farthest from the straight line joining the endpoints, first
    one on ties.
    """
    n = len(values)
    if n < 3:
        return n - 1
    lo, hi = values[0], values[-1]
    span = hi - lo
    if span == 0:
        return 0
    best, best_d = 0, -1.0
    for k in range(n):
        # distance to the (0,0)-(1,1) diagonal, up to a constant factor
        d = abs(k / (n - 1) - (values[k] - lo) / span)
        if d > best_d:
            best, best_d = k, d
    return best


def knee_select(ranked: Sequence[tuple[Pair, float]],
                cap: int = 10) -> list[tuple[Pair, float]]:
    """Keep the promising prefix of a ranking sorted by ascending priority.

    Everything scoring at or below the knee priority survives; degenerate
    rankings (two points or an all-equal plateau) survive whole. At most
    `cap` entries are returned.
    """
    if not ranked:
        return []
    prios = [p for _, p in ranked]
    keep = _knee_cut(prios)
    return list(ranked[:min(keep, cap)])


def _knee_cut(prios: Sequence[float]) -> int:
    n = len(prios)
    if n <= 2 or prios[0] == prios[-1]:
        return n
    return bisect_right(prios, prios[knee_index(prios)])


@dataclass(frozen=True)
class GroupDecision:
    group: tuple[Pair, ...]
    filtered_size: int  # pairs at or below the knee, before the cap
    candidates: int     # feasible groups that were scored


def knee_group_decide(rules: RulePair, ctx: DecisionContext,
                      eligible: Sequence[Pair],
                      cfg: KneeConfig = KneeConfig()) -> GroupDecision:
    """Pick the group to start now. Total: never raises on valid input.

    If no subset of the promising pairs fits the free capacity, fall back to
    the best individually feasible pair; failing that, start nothing.
    """
    if rules.group is None:
        raise ValueError("knee group policy needs a group tree")
    if not eligible:
        return GroupDecision((), 0, 0)

    scored = sorted(
        ((eval_pair_priority(rules.ordering, ctx, p), p) for p in eligible),
        key=lambda sp: (sp[0], sp[1][0], sp[1][1]),
    )
    ranked: list[tuple[Pair, float]] = []
    seen: set[int] = set()
    for prio, pair in scored:
        if pair[0] not in seen:
            seen.add(pair[0])
            ranked.append((pair, prio))

    prios = [p for _, p in ranked]
    filtered = _knee_cut(prios) if cfg.apply_knee else len(ranked)
    width = min(filtered, cfg.cap)
    # never enumerate more subsets than the hard limit allows
    width = min(width, max(1, (cfg.group_size_hard_limit + 1).bit_length() - 1))
    promising = ranked[:width]

    pairs = [p for p, _ in promising]
    demands = [ctx.instance.activities[i].modes[m].demand for i, m in pairs]
    avail = ctx.availability
    feasible: list[int] = []
    for mask in range(1, 1 << len(pairs)):
        need = [0] * len(avail)
        ok = True
        m = mask
        while m:
            low = m & -m
            d = demands[low.bit_length() - 1]
            for r in range(len(avail)):
                need[r] += d[r]
                if need[r] > avail[r]:
                    ok = False
                    break
            if not ok:
                break
            m ^= low
        if ok:
            feasible.append(mask)

    if not feasible:
        solo = [
            (prio, p) for (p, prio), d in zip(promising, demands)
            if all(k <= a for k, a in zip(d, avail))
        ]
        if not solo:
            return GroupDecision((), filtered, 0)
        prio, p = min(solo, key=lambda sp: (sp[0], sp[1][0], sp[1][1]))
        return GroupDecision((p,), filtered, 0)

    if cfg.retain_maximal_only:
        feasible.sort(key=lambda m: m.bit_count(), reverse=True)
        kept: list[int] = []
        for mask in feasible:
            if not any(mask & ~big == 0 for big in kept):
                kept.append(mask)
        feasible = kept

    best_key = None
    best_group: tuple[Pair, ...] = ()
    for mask in feasible:
        group = tuple(pairs[b] for b in _bits(mask))
        score = eval_group_priority(rules.group, ctx, group)
        key = (score, tuple(sorted(i for i, _ in group)))
        if best_key is None or key < best_key:
            best_key = key
            best_group = group
    return GroupDecision(best_group, filtered, len(feasible))


def _bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


@dataclass(frozen=True)
class EnumerationDecision:
    group: tuple[Pair, ...]
    count: int  # candidate assignments, including resource-infeasible ones


def full_enumeration_decide(rules: RulePair, ctx: DecisionContext,
                            eligible: Sequence[Pair],
                            hard_limit: int = DEFAULT_ENUMERATION_LIMIT,
                            ) -> EnumerationDecision:
    """Exact group choice over every skip-or-mode assignment.

    The candidate count is (modes + 1) per activity, combined, minus the
    all-skip assignment. Raises EnumerationOverflowError beyond the limit.
    """
    if rules.group is None:
        raise ValueError("full enumeration needs a group tree")
    if not eligible:
        return EnumerationDecision((), 0)

    by_act: dict[int, list[int]] = {}
    for i, m in eligible:
        by_act.setdefault(i, []).append(m)
    acts = sorted(by_act)
    count = 1
    for i in acts:
        count *= len(by_act[i]) + 1
    count -= 1
    if count > hard_limit:
        raise EnumerationOverflowError(count, hard_limit)

    inst = ctx.instance
    avail = ctx.availability
    n_res = len(avail)
    best: list = [None, ()]  # [key, group]
    chosen: list[Pair] = []
    free = list(avail)

    def descend(idx: int):
        if idx == len(acts):
            if not chosen:
                return
            group = tuple(chosen)
            score = eval_group_priority(rules.group, ctx, group)
            key = (score, tuple(i for i, _ in group), group)
            if best[0] is None or key < best[0]:
                best[0] = key
                best[1] = group
            return
        descend(idx + 1)  # skip this activity
        i = acts[idx]
        for m in by_act[i]:
            dem = inst.activities[i].modes[m].demand
            if all(dem[r] <= free[r] for r in range(n_res)):
                for r in range(n_res):
                    free[r] -= dem[r]
                chosen.append((i, m))
                descend(idx + 1)
                chosen.pop()
                for r in range(n_res):
                    free[r] += dem[r]

    descend(0)
    return EnumerationDecision(best[1], count)


# ---------------------------------------------------------------------------
# executor-facing wrappers

class SequentialPolicy:
    """One activity at a time, chosen by the ordering tree."""

    def __init__(self, ordering: Node):
        self.ordering = ordering

    def decide(self, ctx, eligible):
        return (sequential_decide(self.ordering, ctx, eligible),), len(eligible)


class KneeGroupPolicy:
    def __init__(self, rules: RulePair, cfg: KneeConfig = KneeConfig()):
        if rules.group is None:
            raise ValueError("knee group policy needs a group tree")
        self.rules = rules
        self.cfg = cfg

    def decide(self, ctx, eligible):
        gd = knee_group_decide(self.rules, ctx, eligible, self.cfg)
        return gd.group, gd.filtered_size


class FullEnumerationPolicy:
    def __init__(self, rules: RulePair, hard_limit: int = DEFAULT_ENUMERATION_LIMIT):
        if rules.group is None:
            raise ValueError("full enumeration needs a group tree")
        self.rules = rules
        self.hard_limit = hard_limit

    def decide(self, ctx, eligible):
        ed = full_enumeration_decide(self.rules, ctx, eligible, self.hard_limit)
        return ed.group, len(eligible)


def build_policy(rules: RulePair, name: str, knee: KneeConfig | None = None,
                 hard_limit: int | None = None):
    """Instantiate a policy by its command-line name."""
    knee = knee or KneeConfig()
    if name == "sgp":
        return SequentialPolicy(rules.ordering)
    if name == "ggp":
        return FullEnumerationPolicy(rules, hard_limit or DEFAULT_ENUMERATION_LIMIT)
    if name == "kggp-max":
        return KneeGroupPolicy(rules, replace(knee, retain_maximal_only=True))
    if name == "kggp-all":
        return KneeGroupPolicy(rules, replace(knee, retain_maximal_only=False))
    raise ValueError(f"unknown policy {name!r}; pick one of {', '.join(POLICY_NAMES)}")
