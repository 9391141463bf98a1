"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line with its runtime (run with `pytest tests/test_acceptance.py -v -s`).

Every tolerance is pinned here; randomized criteria run under fixed seeds
so the whole suite is reproducible.
"""

import dataclasses
import math
import random
import statistics
import time

import numpy as np
import pytest
import scipy.stats

from amiprivacy import dp, fedlearn, he, smpc, synthetic
from amiprivacy.anonymize import (
    Aggregate,
    AggregationPolicy,
    QuasiIdentifierRecord,
    Suppressed,
    aggregate_threshold,
    check_k_anonymity,
)
from amiprivacy.gateway import (
    AggregateReport,
    AuditLog,
    AuditWriteFailure,
    DenialReason,
    DpQuery,
    FedTrain,
    Gateway,
    HeBill,
    PolicyConfig,
    Purpose,
    RawExport,
    RequestEnvelope,
    SmpcSum,
    SynthGenerate,
    verify_chain,
)
from amiprivacy.meterdata import EnergyQuantity, FeederDataset
from conftest import StubRng, build_series, make_two_cluster_dataset, make_uniform_dataset


def _report(num, name, ok, elapsed, bound, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {num:02d}] {status} {name} ({elapsed:.2f}s / limit {bound}s) {detail}")
    assert ok, f"criterion {num}: {name}: {detail}"
    assert elapsed < bound, f"criterion {num} exceeded its {bound}s runtime budget"


def test_criterion_01_feeder_noise_below_one_percent():
    start = time.perf_counter()
    dataset = make_uniform_dataset(1000, 1500, 1)  # true total = 1500 kWh
    params = dp.PrivacyParams(epsilon=1.0)
    ledger = dp.BudgetLedger(epsilon_cap=1001.0)
    rng = dp.seeded_rng(402)
    rel_errors = []
    for _ in range(1000):
        answer = dp.dp_sum(dataset, 0, params, ledger, rng)
        rel_errors.append(abs(answer.value - 1500.0) / 1500.0)
    share_below = sum(e < 0.016 for e in rel_errors) / len(rel_errors)
    median = statistics.median(rel_errors)
    elapsed = time.perf_counter() - start
    _report(
        1, "feeder-level noise", share_below >= 0.99 and median < 0.005, elapsed, 5,
        f"share<1.6%={share_below:.3f} median={median * 100:.3f}%",
    )


def test_criterion_02_worked_laplace_example():
    start = time.perf_counter()
    # Delta=5, eps=0.5 gives scale 10 exactly: injected-uniform noise matches
    # the closed form at b=10 bit for bit.
    params = dp.PrivacyParams(epsilon=0.5)
    sens = dp.Sensitivity(5.0)
    scale_exact = all(
        dp.laplace_mechanism(0.0, sens, params, StubRng(uniforms=[u])).value
        == dp.laplace_sample(10.0, u)
        for u in (0.05, 0.25, 0.5, 0.75, 0.95)
    )
    rng = dp.seeded_rng(402)
    n = 1_000_000
    samples = np.fromiter(
        (dp.laplace_sample(10.0, rng.random() or 0.5) for _ in range(n)),
        dtype=float, count=n,
    )
    std = float(samples.std())
    mean = float(samples.mean())
    target = 10.0 * math.sqrt(2.0)
    ok = scale_exact and abs(std - target) <= 0.03 * target and abs(mean) <= 0.05 * 10.0
    elapsed = time.perf_counter() - start
    _report(2, "worked Laplace example", ok, elapsed, 10,
            f"std={std:.4f} target={target:.4f} mean={mean:+.4f}")


def test_criterion_03_additive_composition():
    start = time.perf_counter()
    ledger = dp.BudgetLedger(epsilon_cap=100.0)
    for i in range(24):
        ledger.charge(f"q{i}", 0.5, 0.0)
    exact = dp.compose(ledger).epsilon_total == 12.0

    capped = dp.BudgetLedger(epsilon_cap=1.0)
    capped.charge("a", 0.8, 0.0)
    atomic = False
    try:
        capped.charge("b", 0.3, 0.0)
    except dp.BudgetExhausted:
        atomic = len(capped.entries) == 1
    elapsed = time.perf_counter() - start
    _report(3, "additive composition and atomic cap", exact and atomic, elapsed, 1)


def test_criterion_04_empirical_epsilon_bound():
    start = time.perf_counter()
    params = dp.PrivacyParams(epsilon=1.0)
    sens = dp.Sensitivity(1.0)
    n = 1_000_000
    center = 100.0
    edges = np.arange(center - 20.0, center + 20.5, 0.5)

    def sample_counts(true_count, seed):
        rng = dp.seeded_rng(seed)
        values = np.fromiter(
            (
                dp.laplace_mechanism(true_count, sens, params, rng, query_id="c4").value
                for _ in range(n)
            ),
            dtype=float, count=n,
        )
        counts, _ = np.histogram(values, bins=edges)
        return counts

    counts_d = sample_counts(100.0, 404)
    counts_d1 = sample_counts(101.0, 405)
    # Log-ratio is estimated only where both bins carry real mass; empty
    # bins make the ratio undefined.
    mask = (counts_d >= 1000) & (counts_d1 >= 1000)
    ratios = np.abs(np.log(counts_d[mask] / counts_d1[mask]))
    max_ratio = float(ratios.max())
    elapsed = time.perf_counter() - start
    _report(4, "empirical epsilon on neighboring counts", max_ratio <= 1.15, elapsed, 60,
            f"max|log-ratio|={max_ratio:.4f} over {int(mask.sum())} bins")


def test_criterion_05_paillier_round_trip_and_homomorphism():
    start = time.perf_counter()
    small = he.keypair_from_primes(11, 13)
    rng = random.Random(405)
    exhaustive = all(
        he.decrypt(small, he.encrypt(small.public, m, he.draw_randomizer(small.public, rng))) == m
        for m in range(143)
        for _ in range(10)
    )

    keypair = he.keygen(512, random.Random(406))
    pub = keypair.public
    homomorphic = True
    for _ in range(1000):
        a = rng.randrange(pub.n)
        b = rng.randrange(pub.n)
        k = rng.randrange(0, 1000)
        ca = he.encrypt(pub, a, he.draw_randomizer(pub, rng))
        cb = he.encrypt(pub, b, he.draw_randomizer(pub, rng))
        if he.decrypt(keypair, he.add(ca, cb, pub)) != (a + b) % pub.n:
            homomorphic = False
            break
        if he.decrypt(keypair, he.scalar_mul(ca, k, pub)) != (k * a) % pub.n:
            homomorphic = False
            break
    elapsed = time.perf_counter() - start
    _report(5, "Paillier round-trip and homomorphism", exhaustive and homomorphic,
            elapsed, 30, "n=143 exhaustive + 10^3 cases at 512 bits")


def test_criterion_06_encrypted_billing_exact():
    start = time.perf_counter()
    keypair = he.keygen(512, random.Random(407))
    pub = keypair.public
    rng = random.Random(408)
    ok = True
    for _ in range(100):
        usage = [rng.randrange(0, 5001) for _ in range(24)]  # milli-kWh
        rates = he.RateSchedule(tuple(rng.randrange(0, 500) for _ in range(24)))
        cts = [he.encrypt(pub, m, he.draw_randomizer(pub, rng)) for m in usage]
        bill = he.encrypted_bill(cts, rates, pub, usage_cap=5000)
        if he.decrypt(keypair, bill) != sum(r * u for r, u in zip(rates.rates, usage)):
            ok = False
            break
    elapsed = time.perf_counter() - start
    _report(6, "encrypted billing dot product", ok, elapsed, 30, "100 random 24h fixtures")


def test_criterion_07_secure_sum_protocol():
    start = time.perf_counter()
    rng = random.Random(409)

    exact = True
    for n_parties in (3, 5, 10):
        for _ in range(100):
            values = [rng.randrange(0, 5_000_000) for _ in range(n_parties)]
            inputs = [smpc.PartyInput(f"p{i}", v) for i, v in enumerate(values)]
            result = smpc.secure_sum(inputs, n_parties, rng)
            if result.total != sum(values):
                exact = False

    aborted = smpc.secure_sum(
        [smpc.PartyInput("p0", 1), smpc.PartyInput("p1", 2)], 3, rng
    )
    abort_ok = (
        aborted.aborted
        and aborted.transcript.abort_reason == smpc.ABORT_NOT_ENOUGH_PARTICIPANTS
        and len(aborted.transcript.messages) == 0
    )

    # Single-party view: the share p1 receives from p0 over 1e5 runs each,
    # for two distinct secrets, must be statistically indistinguishable.
    def observed_shares(secret, seed, runs=100_000):
        local = random.Random(seed)
        counts = np.zeros(256, dtype=np.int64)
        inputs = [
            smpc.PartyInput("p0", secret),
            smpc.PartyInput("p1", 1_000),
            smpc.PartyInput("p2", 2_000),
        ]
        for _ in range(runs):
            result = smpc.secure_sum(inputs, 3, local)
            for m in result.transcript.messages:
                if m.sender == "p0" and m.recipient == "p1":
                    counts[m.value >> 56] += 1
                    break
        return counts

    h1 = observed_shares(3_000, 410)
    h2 = observed_shares(4_999_999, 411)
    _, p_value, _, _ = scipy.stats.chi2_contingency(np.stack([h1, h2]))
    elapsed = time.perf_counter() - start
    _report(7, "secure sum protocol", exact and abort_ok and p_value > 0.01, elapsed, 60,
            f"chi2 p={p_value:.3f}")


def test_criterion_08_fedavg_equivalence():
    start = time.perf_counter()
    weighted = fedlearn.fed_avg([
        fedlearn.ClientUpdate("a", fedlearn.ModelParams(np.array([2.0])), 10),
        fedlearn.ClientUpdate("b", fedlearn.ModelParams(np.array([4.0])), 30),
    ])
    formula_ok = weighted.weights.tolist() == [3.5]

    def random_series(meter_id, seed, n=192):
        local = random.Random(seed)
        return build_series(
            meter_id, [local.randrange(200, 3000) for _ in range(n)], interval_s=900
        )

    shards = [
        [random_series(f"m{c}-0", 100 + c), random_series(f"m{c}-1", 200 + c)]
        for c in range(4)
    ]
    train_series = [shard[0] for shard in shards]  # each client holds out its last
    X, y = fedlearn.extract_examples(train_series)
    lr = 0.01

    w = np.zeros(4)
    per_round_ok = True
    worst = 0.0
    for rounds in range(1, 51):
        w = w - lr * (2.0 / len(y)) * (X.T @ (X @ w - y))  # centralized oracle step
        cfg = fedlearn.RoundConfig(rounds=rounds, local_steps=1, learning_rate=lr)
        fed = fedlearn.run_federation(shards, cfg, seed=412).final.weights
        rel = float(np.max(np.abs(fed - w) / np.maximum(np.abs(w), 1e-12)))
        worst = max(worst, rel)
        if rel > 1e-9:
            per_round_ok = False

    cfg = fedlearn.RoundConfig(rounds=50, local_steps=1, learning_rate=lr)
    plain = fedlearn.run_federation(shards, cfg, seed=412, secure_agg=False)
    masked = fedlearn.run_federation(shards, cfg, seed=412, secure_agg=True)
    secure_ok = fedlearn.encode_fixed(plain.final.weights) == fedlearn.encode_fixed(
        masked.final.weights
    )
    elapsed = time.perf_counter() - start
    _report(8, "FedAvg equivalence", formula_ok and per_round_ok and secure_ok,
            elapsed, 30, f"worst per-round rel err={worst:.2e}")


def test_criterion_09_synthetic_fidelity_and_privacy():
    start = time.perf_counter()
    real = make_two_cluster_dataset(n_meters=400, n_days=2, seed=413)
    model = synthetic.fit(real, n_clusters=2, seed=414)
    synth = synthetic.generate(model, n_households=1000, n_days=2, seed=415)

    fidelity = synthetic.fidelity_report(real, synth)
    fidelity_ok = max(fidelity.per_hour_mean_rel_err) < 0.10

    copied = real.series[0]
    poisoned = FeederDataset(
        series=synth.series
        + (build_series("copy", [r.energy.milli_kwh for r in copied.readings]),),
        interval_s=3600,
        delta_max=EnergyQuantity(
            max(synth.delta_max.milli_kwh, real.delta_max.milli_kwh)
        ),
    )
    memorization_ok = synthetic.privacy_check(real, poisoned, 0.01).memorization_flag

    independent_model = synthetic.GeneratorModel(
        clusters=(
            synthetic.ClusterProfile(
                weight=1.0, hourly_mean=(1.1,) * 24, hourly_std=(0.35,) * 24
            ),
        )
    )
    independent = synthetic.generate(independent_model, 1000, 2, seed=9999)
    auc = synthetic.privacy_check(real, independent, 0.01).distinguisher_auc
    auc_ok = 0.4 <= auc <= 0.6
    elapsed = time.perf_counter() - start
    _report(
        9, "synthetic fidelity and privacy",
        fidelity_ok and memorization_ok and auc_ok, elapsed, 120,
        f"max hour err={max(fidelity.per_hour_mean_rel_err):.3f} auc={auc:.3f}",
    )


def _k_anonymity_oracle(records, k):
    groups: dict[tuple, int] = {}
    for rec in records:
        groups[rec.attributes] = groups.get(rec.attributes, 0) + 1
    violating = sorted((attrs, n) for attrs, n in groups.items() if n < k)
    return (len(violating) == 0), violating


def test_criterion_10_k_anonymity_and_thresholds():
    start = time.perf_counter()
    rng = random.Random(416)
    verifier_ok = True
    for _ in range(100):
        arity = rng.randrange(1, 4)
        n_records = rng.randrange(0, 60)
        records = [
            QuasiIdentifierRecord(
                attributes=tuple(
                    rng.choice(["a", "b", "c"]) for _ in range(arity)
                )
            )
            for _ in range(n_records)
        ]
        k = rng.randrange(1, 6)
        report = check_k_anonymity(records, k)
        oracle_pass, oracle_violating = _k_anonymity_oracle(records, k)
        if report.passed != oracle_pass or list(report.violating_classes) != oracle_violating:
            verifier_ok = False
            break

    suppression_ok = True
    for _ in range(100):
        min_count = rng.randrange(1, 10)
        groups = {
            f"g{j}": [EnergyQuantity(rng.randrange(0, 5000))
                      for _ in range(rng.randrange(0, 15))]
            for j in range(rng.randrange(1, 8))
        }
        out = aggregate_threshold(groups, AggregationPolicy(min_count=min_count))
        for key, members in groups.items():
            value = out[key]
            if len(members) < min_count:
                if not isinstance(value, Suppressed) or dataclasses.fields(value):
                    suppression_ok = False  # a numeric field leaked
            else:
                if not isinstance(value, Aggregate) or value.count != len(members):
                    suppression_ok = False
    elapsed = time.perf_counter() - start
    _report(10, "k-anonymity verifier and suppression", verifier_ok and suppression_ok,
            elapsed, 5, "100 random datasets each")


def _fresh_gateway(policy=None, cap=1000.0):
    dataset = make_two_cluster_dataset(n_meters=24, n_days=5, seed=417)
    policy = policy or PolicyConfig(
        epsilon_cap=cap, min_aggregation_count=3, k_anonymity_k=2,
        allow_raw_primary=True, memorization_threshold=0.01,
    )
    ledger = dp.BudgetLedger(epsilon_cap=cap)
    return Gateway(dataset, policy, ledger, AuditLog(), rng=random.Random(418))


def test_criterion_11_gateway_end_to_end():
    start = time.perf_counter()
    g = _fresh_gateway()
    meters = tuple(s.meter_id for s in g.dataset.series)
    operations = {
        "raw_export": lambda: RawExport(),
        "dp_query": lambda: DpQuery(op="count", epsilon=0.1),
        "synth_generate": lambda: SynthGenerate(
            n_clusters=2, n_households=10, n_days=2, seed=5
        ),
        "fed_train": lambda: FedTrain(
            n_clients=2, rounds=1, local_steps=1, learning_rate=0.01
        ),
        "smpc_sum": lambda: SmpcSum(values=(("a", 100), ("b", 200)), min_participants=2),
        "he_bill": lambda: HeBill(usage_milli=(2, 3), rates=(10, 20)),
        "aggregate_report": lambda: AggregateReport(groups=(("all", meters),)),
    }
    # The policy table: raw export needs primary purpose or secondary consent;
    # every protected-output operation is allowed regardless of consent.
    expected_allowed = {
        name: {
            (Purpose.PRIMARY, True): True,
            (Purpose.PRIMARY, False): True,
            (Purpose.SECONDARY, True): True,
            (Purpose.SECONDARY, False): name != "raw_export",
        }
        for name in operations
    }

    matrix_ok = True
    n_requests = 0
    for name, make_op in operations.items():
        for purpose in (Purpose.PRIMARY, Purpose.SECONDARY):
            for consent in (True, False):
                req = RequestEnvelope(
                    request_id=f"{name}-{purpose.value}-{consent}",
                    requester="matrix",
                    purpose=purpose,
                    consent=consent,
                    operation=make_op(),
                )
                decision = g.route(req)
                n_requests += 1
                if decision.allowed != expected_allowed[name][(purpose, consent)]:
                    matrix_ok = False
                if name == "raw_export" and not decision.allowed:
                    if decision.reason is not DenialReason.CONSENT_REQUIRED:
                        matrix_ok = False

    # Denial rows of the table.
    strict = _fresh_gateway(policy=PolicyConfig(
        epsilon_cap=0.05, min_aggregation_count=3, k_anonymity_k=2,
        allow_raw_primary=False, memorization_threshold=0.01,
    ), cap=0.05)
    denials = [
        strict.route(RequestEnvelope("d1", "x", Purpose.PRIMARY, False, RawExport())),
        strict.route(RequestEnvelope(
            "d2", "x", Purpose.SECONDARY, False, DpQuery(op="count", epsilon=0.1))),
        strict.route(RequestEnvelope(
            "d3", "x", Purpose.SECONDARY, False,
            AggregateReport(groups=(("tiny", meters[:2]),)))),
    ]
    denial_ok = [d.reason for d in denials] == [
        DenialReason.POLICY_VIOLATION,
        DenialReason.BUDGET_EXHAUSTED,
        DenialReason.BELOW_AGGREGATION_THRESHOLD,
    ]

    audit_ok = (
        len(g.audit_log.records) == n_requests
        and verify_chain(g.audit_log.records).valid
    )

    # 10^3 random single-byte tamperings must each be detected at the record.
    rng = random.Random(419)
    records = list(g.audit_log.records)
    tamper_ok = True
    string_fields = ("request_id", "requester", "decision", "mechanism")
    for _ in range(1000):
        k = rng.randrange(len(records))
        tampered = list(records)
        target = rng.choice(string_fields + ("hash", "prev_hash"))
        if target in string_fields:
            text = getattr(tampered[k], target)
            pos = rng.randrange(len(text))
            flipped = chr(ord(text[pos]) ^ (1 << rng.randrange(4)))
            new_value = text[:pos] + flipped + text[pos + 1 :]
        else:
            raw = bytearray(getattr(tampered[k], target))
            raw[rng.randrange(len(raw))] ^= 1 << rng.randrange(8)
            new_value = bytes(raw)
        tampered[k] = dataclasses.replace(tampered[k], **{target: new_value})
        report = verify_chain(tampered)
        if report.valid or report.first_bad_seq != k:
            tamper_ok = False
            break

    # Fault-injected audit failure: nothing is released, nothing is logged.
    def failing_writer(record):
        raise IOError("injected audit fault")

    dataset = make_uniform_dataset(4, 1500, 4)
    broken = Gateway(
        dataset, PolicyConfig(min_aggregation_count=2),
        dp.BudgetLedger(epsilon_cap=10.0), AuditLog(writer=failing_writer),
        rng=random.Random(420),
    )
    fail_closed = False
    try:
        broken.route(RequestEnvelope("f1", "x", Purpose.PRIMARY, True, RawExport()))
    except AuditWriteFailure:
        fail_closed = len(broken.audit_log.records) == 0
    elapsed = time.perf_counter() - start
    _report(
        11, "gateway end-to-end",
        matrix_ok and denial_ok and audit_ok and tamper_ok and fail_closed,
        elapsed, 10,
        f"{n_requests} matrix requests, 1000 tamper trials",
    )
