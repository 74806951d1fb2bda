import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chi2_contingency

from kgfair.errors import InvalidParams
from kgfair.fairness import find_free_drugs
from kgfair.graph import NUM_SDOH, NodeType, Relation, build_graph, load_graph, sensitive_pair
from kgfair.synth import GenParams, generate, generate_graph, params_sidecar_path, write_generated

SMALL = dict(n_drugs=80, n_diseases=50, n_phenotypes=30, n_communities=5)


def block_degree(gen, drugs):
    treats = gen.graph.edges(Relation.DRUG_TREATS_DISEASE)
    in_block = np.isin(treats[:, 1], gen.block)
    counts = np.bincount(treats[in_block, 0], minlength=gen.params.n_drugs)
    return counts[drugs].mean()


class TestPlanting:
    @pytest.mark.parametrize("seed", range(5))
    def test_w0_drugs_treat_block_more(self, seed):
        gen = generate(GenParams(seed=seed))
        assert block_degree(gen, gen.w0_drugs) > block_degree(gen, gen.w1_drugs)

    def test_no_planting_is_independent(self):
        # attachment (w0 vs w1) x block-edge presence, over drug/block-disease pairs
        for seed in range(5):
            gen = generate(GenParams(seed=seed, bias_strength=0.0))
            treats = gen.graph.edges(Relation.DRUG_TREATS_DISEASE)
            hit = np.zeros((gen.params.n_drugs, gen.params.n_diseases), bool)
            hit[treats[:, 0], treats[:, 1]] = True
            table = []
            for group in (gen.w0_drugs, gen.w1_drugs):
                cells = hit[np.ix_(group, gen.block)]
                table.append([cells.sum(), cells.size - cells.sum()])
            p = chi2_contingency(np.array(table))[1]
            assert p > 0.01, (seed, table, p)

    @pytest.mark.parametrize("seed", range(5))
    def test_free_drugs_exact(self, seed):
        params = GenParams(seed=seed, **SMALL)
        gen = generate(params)
        n_free = int(np.ceil(params.free_fraction * params.n_drugs))
        assert len(gen.free_drugs) == n_free
        assert np.array_equal(find_free_drugs(gen.graph, params.planted_category), gen.free_drugs)
        assert abs(len(gen.w0_drugs) - len(gen.w1_drugs)) <= 1

    def test_attachment_is_exclusive(self):
        gen = generate(GenParams(seed=3, **SMALL))
        w0, w1 = sensitive_pair(gen.params.planted_category)
        sd = gen.graph.edges(Relation.DRUG_HAS_SDOH)
        on0, on1 = set(sd[sd[:, 1] == w0, 0]), set(sd[sd[:, 1] == w1, 0])
        assert on0 == set(gen.w0_drugs.tolist()) and on1 == set(gen.w1_drugs.tolist())
        assert not on0 & on1

    def test_unplanted(self):
        gen = generate(GenParams(planted_category=None, seed=1, **SMALL))
        assert len(gen.free_drugs) == 0 and len(gen.w0_drugs) == 0


class TestRates:
    def test_edge_counts_within_three_sigma(self):
        # summed over a batch of 10 seeds, excluding the planted block / planted SDoH columns
        base = GenParams()
        w0, w1 = sensitive_pair(base.planted_category)
        observed = {r: 0 for r in Relation}
        expected = {r: 0.0 for r in Relation}
        variance = {r: 0.0 for r in Relation}
        nd, ns, nph = base.n_drugs, base.n_diseases, base.n_phenotypes
        for seed in range(10):
            gen = generate(GenParams(seed=seed))
            g = gen.graph
            treats = g.edges(Relation.DRUG_TREATS_DISEASE)
            off_block = ~np.isin(treats[:, 1], gen.block)
            sd = g.edges(Relation.DRUG_HAS_SDOH)
            counted = {
                Relation.DRUG_TREATS_DISEASE: (off_block.sum(), nd * (ns - len(gen.block)), base.p_treats),
                Relation.DRUG_HAS_SDOH: ((~np.isin(sd[:, 1], [w0, w1])).sum(), nd * (NUM_SDOH - 2), base.p_drug_sdoh),
                Relation.DISEASE_HAS_SDOH: (g.edges(Relation.DISEASE_HAS_SDOH).shape[0], ns * NUM_SDOH, base.p_disease_sdoh),
                Relation.PHENOTYPE_OF_DRUG: (g.edges(Relation.PHENOTYPE_OF_DRUG).shape[0], nph * nd, base.p_phenotype_drug),
                Relation.PHENOTYPE_OF_DISEASE: (g.edges(Relation.PHENOTYPE_OF_DISEASE).shape[0], nph * ns, base.p_phenotype_disease),
            }
            for rel, (obs, pairs, p) in counted.items():
                observed[rel] += obs
                expected[rel] += pairs * p
                variance[rel] += pairs * p * (1 - p)
        for rel in Relation:
            z = (observed[rel] - expected[rel]) / np.sqrt(variance[rel])
            assert abs(z) < 3, (rel, observed[rel], expected[rel], z)

    def test_community_rates_average_to_base(self):
        p = GenParams()
        p_in, p_out = p.community_rates(0.02)
        c = p.n_communities
        assert (p_in + (c - 1) * p_out) / c == pytest.approx(0.02)


class TestIO:
    def test_same_seed_same_bytes(self, tmp_path):
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        write_generated(GenParams(seed=7, **SMALL), a)
        write_generated(GenParams(seed=7, **SMALL), b)
        assert a.read_bytes() == b.read_bytes()
        c = tmp_path / "c.tsv"
        write_generated(GenParams(seed=8, **SMALL), c)
        assert c.read_bytes() != a.read_bytes()

    def test_sidecar(self, tmp_path):
        p = tmp_path / "g.tsv"
        params = GenParams(seed=2, **SMALL)
        g = write_generated(params, p)
        doc = json.loads(open(params_sidecar_path(p)).read())
        assert GenParams(**doc) == params
        assert load_graph(p) == g

    def test_without_disease_sdoh(self):
        g = generate_graph(GenParams(include_disease_sdoh=False, seed=0, **SMALL))
        assert Relation.DISEASE_HAS_SDOH not in g.relations

    @pytest.mark.parametrize("kw", [
        dict(n_drugs=0), dict(p_treats=1.5), dict(bias_strength=-0.1), dict(free_fraction=1.0),
        dict(free_fraction=0.0), dict(planted_category="drug_use"), dict(planted_category="wealth"),
        dict(p_treats=0.2, n_communities=20),
    ])
    def test_invalid(self, kw):
        with pytest.raises(InvalidParams):
            generate_graph(GenParams(**kw))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 0.95), st.floats(0, 1),
       st.sampled_from(["economics", "education", "community_present", "community_absent", "environment", None]))
def test_generated_graphs_validate(seed, free, beta, cat):
    params = GenParams(seed=seed, free_fraction=free, bias_strength=beta, planted_category=cat, **SMALL)
    gen = generate(params)
    g = gen.graph
    rebuilt = build_graph(g.triples(), g.node_counts, g.relations)
    assert rebuilt == g
    assert g.node_counts[NodeType.SDOH] == NUM_SDOH
    if cat is not None:
        assert len(find_free_drugs(g, cat)) == int(np.ceil(free * params.n_drugs))
