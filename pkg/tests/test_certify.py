import numpy as np
import pytest

from denoise_kge.certify import (
    CertConfig,
    CertificationRecord,
    certified_radius,
    certify_queries,
    certify_query,
    count_successes,
    robustness_report,
    smoothed_trial,
    summarize,
)
from denoise_kge.kg import FilterIndex, Query
from denoise_kge.models import EmbeddingModel, init_model
from denoise_kge.stats import clopper_pearson_lcb, phi_inverse


def _two_entity_model():
    # DistMult, |E| = 2: head 0 prefers tail 1 by a margin of 1.0
    ent = np.array([[1.0, 0.0], [2.0, 0.0]])
    return EmbeddingModel("DistMult", 2, ent, np.array([[1.0, 2.0]]))


def test_zero_sigma_trials():
    m = _two_entity_model()
    rng = np.random.default_rng(0)
    assert smoothed_trial(m, Query(0, 0, 1), 0.0, rng)
    assert not smoothed_trial(m, Query(0, 0, 0), 0.0, rng)


def test_filter_masks_other_true_tails_only():
    m = _two_entity_model()
    filt = FilterIndex.from_triples([(0, 0, 0), (0, 0, 1)])
    assert smoothed_trial(m, Query(0, 0, 0), 0.0, np.random.default_rng(0), filt)
    assert smoothed_trial(m, Query(0, 0, 1), 0.0, np.random.default_rng(0), filt)


def test_success_rate_monotone_in_sigma():
    m = _two_entity_model()
    q = Query(0, 0, 1)
    rates = [count_successes(m, q, s, 1000, np.random.default_rng(1)) for s in (0.1, 0.5, 1.0, 3.0)]
    assert all(b <= a for a, b in zip(rates, rates[1:]))
    assert rates[0] == 1000 and rates[-1] < 900


def test_count_independent_of_chunk():
    m = init_model("RotatE", 4, 10, 2, seed=0)
    q = Query(3, 1, 5)
    counts = {count_successes(m, q, 0.2, 300, np.random.default_rng(2), chunk=c) for c in (1, 7, 300)}
    assert len(counts) == 1


def test_all_successes_maximal_radius():
    p, cr = certified_radius(1000, 1000, 0.999, 0.5)
    assert p == clopper_pearson_lcb(1000, 1000, 0.999)
    assert cr == 0.5 * phi_inverse(p)
    assert cr > 0


def test_abstain_and_zero_sigma():
    assert certified_radius(520, 1000, 0.999, 1.0)[1] == 0.0
    assert certified_radius(1000, 1000, 0.999, 0.0)[1] == 0.0


def test_radius_non_decreasing_in_count():
    radii = [certified_radius(k, 200, 0.99, 1.0)[1] for k in range(201)]
    assert all(b >= a for a, b in zip(radii, radii[1:]))


def test_record_invariants():
    m = init_model("TransE", 4, 12, 2, seed=1, init_scale=1.0)
    cfg = CertConfig(n0=200, sigma=0.3, seed=4)
    for i in range(6):
        rec = certify_query(m, Query(i, i % 2, (i + 1) % 12), cfg, np.random.default_rng(i))
        assert 0 <= rec.count <= rec.n0
        assert 0.0 <= rec.p_lower <= rec.count / rec.n0
        assert rec.certified == (rec.p_lower > 0.5)
        assert (rec.cr > 0) == rec.certified


def test_n0_one_smoke():
    m = init_model("ComplEx", 3, 5, 1, seed=0)
    queries = [Query(h, 0, (h + 1) % 5) for h in range(5)]
    report, records = robustness_report(m, queries, CertConfig(n0=1, sigma=0.1))
    assert not any(r.certified for r in records)
    assert report.acr == 0.0 and report.ca0 == 0.0


def test_config_validation():
    for bad in (CertConfig(n0=0), CertConfig(confidence=1.0), CertConfig(sigma=-1.0)):
        with pytest.raises(ValueError):
            bad.validate()


def test_workers_and_reruns_identical():
    m = init_model("RotatE", 6, 30, 4, seed=2, init_scale=0.5)
    queries = [Query(h, h % 4, (3 * h + 1) % 30) for h in range(30)]
    cfg = CertConfig(n0=100, sigma=0.2, seed=7)
    serial = certify_queries(m, queries, cfg)
    assert certify_queries(m, queries, cfg, workers=4) == serial
    assert certify_queries(m, queries, cfg) == serial


def test_empty_queries_rejected():
    m = init_model("TransE", 2, 3, 1)
    with pytest.raises(ValueError):
        robustness_report(m, [], CertConfig(sigma=1.0))


# --- aggregate metrics ----------------------------------------------------


def _records(radii, sigma=2.0):
    return [CertificationRecord(Query(0, 0, i), 0, 1, 0.0, float(c), sigma) for i, c in enumerate(radii)]


def test_all_uncertified():
    rep = summarize(_records([0.0] * 5), radii=[0.5, 1.0])
    assert rep.acr == 0.0 and rep.ca0 == 0.0 and rep.acr_over_sigma == 0.0
    assert all(ca == 0.0 for _, ca in rep.ca_curve)


def test_single_query_strict_boundary():
    rep = summarize(_records([1.5]), radii=[0.5, 1.4999, 1.5, 2.0])
    assert dict(rep.ca_curve) == {0.0: 1.0, 0.5: 1.0, 1.4999: 1.0, 1.5: 0.0, 2.0: 0.0}
    assert rep.acr == 1.5


def test_all_maximal():
    _, cr = certified_radius(1000, 1000, 0.999, 2.0)
    rep = summarize(_records([cr] * 4), radii=[cr])
    assert rep.acr == cr and rep.ca0 == 1.0
    assert dict(rep.ca_curve)[cr] == 0.0


def test_identities_on_random_records():
    rng = np.random.default_rng(0)
    cr = np.where(rng.random(200) < 0.4, 0.0, rng.uniform(0, 3, 200))
    recs = _records(cr, sigma=1.5)
    rep = summarize(recs, radii=np.linspace(0, 3, 31))
    assert rep.acr == float(np.mean(cr))
    assert rep.acr_over_sigma == float(np.mean(cr / 1.5))
    assert rep.ca0 == float(np.mean([r.certified for r in recs]))
    cas = [ca for _, ca in rep.ca_curve]
    assert all(b <= a for a, b in zip(cas, cas[1:]))


def test_acr_is_area_under_ca():
    rng = np.random.default_rng(1)
    cr = np.where(rng.random(100) < 0.3, 0.0, rng.uniform(0, 2, 100))
    grid = np.linspace(0, 2, 20001)
    rep = summarize(_records(cr), radii=grid)
    R = np.array([r for r, _ in rep.ca_curve])
    ca = np.array([c for _, c in rep.ca_curve])
    area = float(np.sum(ca[:-1] * np.diff(R)))
    assert area == pytest.approx(rep.acr, abs=2 / 20000)


def test_summarize_empty():
    with pytest.raises(ValueError):
        summarize([])
