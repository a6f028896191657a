import pytest
from hypothesis import given, settings, strategies as st

from flowaction.features import windows_from_labels
from flowaction.ingest import DeviceConfig, assemble_flows, parse_capture, parse_labels
from flowaction.preprocess import OwnerMap, domain_filter, packet_filter, preprocess
from flowaction.series import complete_series
from flowaction.synthgen import (
    ARCHETYPES, TARGET_OWNERS, ActionTemplate, FlowTemplate, ScenarioSpec, acceptance_scenario, generate,
    load_scenario, parse_scenario, planted_scenario, table1_scenario, write_scenario,
)


def _filtered(scenario, spec):
    flows = assemble_flows(scenario.packets, DeviceConfig(spec.device_ip))
    return preprocess(flows, scenario.owners)


def test_single_flow_template_yields_base_series_per_window():
    base = (300, -1514, 120, -77)
    spec = ScenarioSpec((ActionTemplate("a", (FlowTemplate(base),)),), accounts=1, sequences_per_account=5)
    s = generate(spec)
    flows = _filtered(s, spec)
    assert s.windows == 5
    assert [complete_series(f) for f in flows] == [list(base)] * 5


def test_same_seed_same_bytes():
    spec = planted_scenario(seed=3, sequences_per_account=2)
    a, b = generate(spec), generate(spec)
    assert a.capture_csv() == b.capture_csv()
    assert a.labels_csv() == b.labels_csv()
    other = generate(planted_scenario(seed=4, sequences_per_account=2))
    assert other.capture_csv() != a.capture_csv()


def test_drop_rate_matches_probability():
    base = ARCHETYPES[6]
    tmpl = ActionTemplate("a", (FlowTemplate(base, drop_prob=0.2), FlowTemplate(ARCHETYPES[7], drop_prob=0.2)))
    spec = ScenarioSpec((tmpl,), accounts=1, sequences_per_account=600, seed=8, ack_prob=0.0)
    s = generate(spec)
    trials = 2 * 600
    kept = len(_filtered(s, spec))
    assert abs((trials - kept) / trials - 0.2) <= 0.05
    assert kept == s.flows_emitted and trials == s.flows_emitted + s.flows_dropped


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 0.6), st.floats(0, 1))
def test_roundtrip_with_acks_and_retransmissions(seed, retransmit, ack):
    spec = table1_scenario(seed=seed, retransmit_prob=retransmit, ack_prob=ack)
    s = generate(spec)
    flows = assemble_flows(parse_capture(s.capture_csv()), DeviceConfig(spec.device_ip))
    # handshake, pure ACKs, duplicates and teardown are all removed
    assert sorted(complete_series(packet_filter(f)) for f in flows) == sorted(
        list(t.base) for t in spec.templates[0].flow_templates)


def test_noise_flows_removed_by_domain_filter():
    spec = planted_scenario(sequences_per_account=2)
    spec = ScenarioSpec(spec.templates, accounts=2, sequences_per_account=2, noise_flow_rate=3.0, seed=1)
    s = generate(spec)
    flows = assemble_flows(s.packets, DeviceConfig(spec.device_ip))
    kept = domain_filter(flows, s.owners)
    assert len(flows) > len(kept) == s.flows_emitted
    assert all(s.owners.owner(f.key.server_ip) in TARGET_OWNERS for f in kept)


def test_windows_separated_beyond_timeout_and_labels_match():
    spec = planted_scenario(sequences_per_account=3)
    s = generate(spec)
    flows = _filtered(s, spec)
    windows = windows_from_labels(flows, parse_labels(s.labels_csv()))
    assert len(windows) == s.windows == 6 * 3 * 3
    for a, b in zip(windows, windows[1:]):
        assert b.start - a.end > 4.5
    assert all(len(w.flows) == 1 for w in windows)
    assert all(f.label == w.label for w in windows for f in w.flows)


def test_empty_window_gets_marker_line():
    tmpl = ActionTemplate("ghost", (FlowTemplate(ARCHETYPES[0], drop_prob=0.9),))
    s = generate(ScenarioSpec((tmpl,), accounts=1, sequences_per_account=30, seed=2))
    entries = parse_labels(s.labels_csv())
    markers = [e for e in entries if e.flow_key is None]
    assert len(markers) == s.flows_dropped > 0
    assert len({e.window_id for e in entries}) == 30


def test_acceptance_scenario_shape():
    spec = acceptance_scenario()
    assert spec.experiment_ready()
    labels = [t.label for t in spec.templates]
    assert len(set(labels) - {"other"}) == 6 and "other" in labels
    multisets = {tuple(sorted(ft.base for ft in t.flow_templates)) for t in spec.templates}
    assert len(multisets) == len(spec.templates)
    assert all(ft.jitter <= 40 and ft.drop_prob == 0.1 for t in spec.templates for ft in t.flow_templates)
    assert spec.accounts * spec.sequences_per_account * len(spec.templates) == 1530


def test_scenario_validation():
    with pytest.raises(ValueError):
        FlowTemplate((100,), jitter=-1)
    with pytest.raises(ValueError):
        FlowTemplate((100,), drop_prob=1.5)
    with pytest.raises(ValueError):
        ScenarioSpec(())
    assert not table1_scenario().experiment_ready()


def test_scenario_file_forms(tmp_path):
    spec = parse_scenario({"preset": "planted", "n_archetypes": 4, "accounts": 5, "noise_flow_rate": 1.0})
    assert len(spec.templates) == 4 and spec.accounts == 5 and spec.noise_flow_rate == 1.0
    path = tmp_path / "s.toml"
    path.write_text(
        "seed = 2\naccounts = 3\n\n[archetypes]\nshort = [100, -200]\n\n"
        '[[templates]]\nlabel = "x"\nflows = [{archetype = "short", jitter = 5}, {base = [300, -300]}]\n'
    )
    spec = load_scenario(path)
    assert spec.seed == 2 and spec.templates[0].flow_templates[0].base == (100, -200)
    assert spec.templates[0].flow_templates[0].jitter == 5
    with pytest.raises(ValueError):
        parse_scenario({"preset": "nope"})


def test_write_scenario_files(tmp_path):
    spec = planted_scenario(accounts=5, sequences_per_account=1)
    paths = write_scenario(generate(spec), spec, tmp_path)
    assert all(p.exists() for p in paths.values())
    text = paths["config"].read_text()
    assert 'test_accounts = ["acct05"]' in text and 'validation_accounts = ["acct04"]' in text
    owners = OwnerMap.parse(paths["owners"].read_text())
    assert {o for _, o in owners.entries} >= set(TARGET_OWNERS)
