"""Configuration handling and the ensemble pipeline on a tiny bundle."""

import copy
import json

import pytest

from aimsolve.experiment import (
    ConfigError,
    _u_tag,
    average_branches,
    config_from_mapping,
    config_hash,
    config_schema,
    format_cost_table,
    load_config,
    normalized_config,
    read_json,
    report_costs,
    run_experiment,
    run_stage,
    stage_aggregate,
    with_master_seed,
    worker_count,
)

MINIMAL = {
    "master_seed": 0,
    "model": {"n_bath": 1, "u_values": [2.0]},
    "vqe": {"n_seeds": 1, "n_repeats": 1},
}


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle")
    config = config_from_mapping(copy.deepcopy(MINIMAL))
    counts = run_experiment(config, out, threads=1)
    return out, config, counts


def test_defaults_from_empty_mapping():
    config = config_from_mapping({})
    assert config.model.n_bath == 1
    assert config.model.u_values == (2.0, 4.0, 6.0, 8.0)
    assert config.vqe.method == "lbfgsb"
    assert config.vqe.mode == "exact"
    assert config.qcm.enabled
    assert config.greens.depth == 2
    assert config.output.formats == ("json", "csv")
    assert config.ensemble() == (10, 5)


def test_ensemble_defaults_by_bath_size():
    big = config_from_mapping({"model": {"n_bath": 5, "u_values": [4.0]}})
    assert big.ensemble() == (1, 2)
    override = config_from_mapping({"vqe": {"n_seeds": 3}})
    assert override.ensemble() == (3, 5)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="top-level"):
        config_from_mapping({"models": {}})
    with pytest.raises(ConfigError, match="nbath"):
        config_from_mapping({"model": {"nbath": 3}})
    with pytest.raises(ConfigError, match="must be a table"):
        config_from_mapping({"model": 5})


@pytest.mark.parametrize(
    "mapping,fragment",
    [
        ({"model": {"n_bath": 2}}, "odd"),
        ({"model": {"u_values": []}}, "non-empty"),
        ({"model": {"u_values": [2.0, 2.0]}}, "distinct"),
        ({"model": {"u_values": [-1.0]}}, "positive"),
        ({"model": {"hybridization": 0.0}}, "hybridization"),
        ({"model": {"n_bath": 3, "bath_energies": [0.1]}}, "bath_energies"),
        ({"vqe": {"method": "sgd"}}, "vqe.method"),
        ({"vqe": {"mode": "noisy"}}, "vqe.mode"),
        ({"vqe": {"mode": "sampled", "shots_per_group": 10, "eps": 0.1}}, "alternatives"),
        ({"vqe": {"shots_per_group": 10}}, "sampled"),
        ({"vqe": {"mode": "sampled", "shots_per_group": 0}}, "positive integer"),
        ({"model": {"n_bath": 7}, "vqe": {"mode": "sampled"}}, "no default shot count"),
        ({"vqe": {"n_seeds": 0}}, "n_seeds"),
        ({"qcm": {"shots": [1, 2, 3]}}, "four positive"),
        ({"greens": {"method": "dream"}}, "greens.method"),
        ({"greens": {"depth": 0}}, "depth"),
        ({"greens": {"eta": -0.1}}, "eta"),
        ({"greens": {"n_omega": 2}}, "n_omega"),
        ({"output": {"formats": ["csv"]}}, "must include 'json'"),
        ({"output": {"formats": ["yaml"]}}, "formats"),
        ({"master_seed": -1}, "master_seed"),
    ],
)
def test_validation_rejects(mapping, fragment):
    with pytest.raises(ConfigError, match=fragment):
        config_from_mapping(mapping)


def test_validation_collects_every_problem():
    with pytest.raises(ConfigError) as excinfo:
        config_from_mapping({"model": {"n_bath": 2, "hybridization": -1.0}})
    message = str(excinfo.value)
    assert "n_bath" in message and "hybridization" in message and ";" in message


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("model = {\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    good = tmp_path / "good.toml"
    good.write_text('master_seed = 3\n[model]\nn_bath = 1\nu_values = [2.0]\n')
    config = load_config(good)
    assert config.master_seed == 3
    assert config.model.u_values == (2.0,)


def test_config_hash_tracks_content():
    a = config_from_mapping(copy.deepcopy(MINIMAL))
    b = config_from_mapping(copy.deepcopy(MINIMAL))
    assert config_hash(a) == config_hash(b)
    remapped = copy.deepcopy(MINIMAL)
    remapped["model"]["u_values"] = [4.0]
    assert config_hash(config_from_mapping(remapped)) != config_hash(a)
    reseeded = with_master_seed(a, 9)
    assert reseeded.master_seed == 9
    assert config_hash(reseeded) != config_hash(a)
    # the hash covers resolved defaults, so the normal form carries them
    resolved = normalized_config(a)
    assert resolved["vqe"]["n_seeds"] == 1
    assert resolved["vqe"]["n_repeats"] == 1


def test_u_tag_formatting():
    assert _u_tag(2.0) == "u2"
    assert _u_tag(2.5) == "u2.5"
    assert _u_tag(10.0) == "u10"


def test_worker_count_sources(monkeypatch):
    monkeypatch.delenv("AIMSOLVE_THREADS", raising=False)
    assert worker_count(3) == 3
    assert worker_count() >= 1
    monkeypatch.setenv("AIMSOLVE_THREADS", "2")
    assert worker_count() == 2
    assert worker_count(5) == 5  # explicit argument beats the environment
    monkeypatch.setenv("AIMSOLVE_THREADS", "zzz")
    with pytest.raises(ConfigError):
        worker_count()


def test_schema_text_mentions_every_block():
    text = config_schema()
    for block in ("[model]", "[vqe]", "[qcm]", "[greens]", "[output]"):
        assert block in text


def test_bundle_file_inventory(bundle):
    out, config, counts = bundle
    for stage in ("exact", "vqe", "qcm", "greens", "aggregate"):
        assert counts[stage] == {"computed": 1, "skipped": 0}
    cell = out / "nb1" / "u2"
    expected = [
        "aggregate.json",
        "dos_exact.csv",
        "dos_exact.json",
        "dos_quantum.csv",
        "dos_quantum.json",
        "exact.json",
        "histories.csv",
        "run_s00_r00.json",
    ]
    assert sorted(p.name for p in cell.iterdir()) == expected
    manifest = read_json(out / "manifest.json")
    assert manifest["config_hash"] == config_hash(config)
    assert manifest["stages"] == ["exact", "vqe", "qcm", "greens", "aggregate"]


def test_bundle_record_contents(bundle):
    out, config, _ = bundle
    cell = out / "nb1" / "u2"
    exact = read_json(cell / "exact.json")
    assert exact["e0"] == pytest.approx(-2.5615528128088307, abs=1e-9)
    assert len(exact["fractions"]) == 4

    run = read_json(cell / "run_s00_r00.json")
    assert run["seed_index"] == 0 and run["repeat_index"] == 0
    vqe = run["vqe"]
    assert vqe["mode"] == "exact" and vqe["method"] == "lbfgsb"
    assert vqe["best_energy"] == pytest.approx(exact["e0"], abs=1e-5)
    assert len(vqe["best_params"]) == 5
    assert vqe["total_shots"] == 0
    assert run["qcm"]["e_inf"] is not None
    branches = run["greens"]["branches"]
    assert sorted(branches) == ["down_hole", "down_particle", "up_hole", "up_particle"]
    for entry in branches.values():
        assert len(entry["a"]) == config.greens.depth

    aggregate = read_json(cell / "aggregate.json")
    assert aggregate["n_runs"] == 1
    assert aggregate["vqe"]["mean_abs_rel_error"] < 1e-4
    assert aggregate["qcm"]["n_corrected"] == 1
    averaged = aggregate["greens"]["averaged_branches"]
    assert all(entry["n_averaged"] == 1 for entry in averaged.values())


def test_resume_skips_existing_work(bundle):
    out, config, _ = bundle
    run_file = out / "nb1" / "u2" / "run_s00_r00.json"
    before = run_file.read_bytes()
    counts = run_experiment(config, out, resume=True, threads=1)
    for stage in ("exact", "vqe", "qcm", "greens"):
        assert counts[stage] == {"computed": 0, "skipped": 1}
    assert run_file.read_bytes() == before


def test_rerun_is_byte_identical(bundle, tmp_path):
    out, config, _ = bundle
    twin = tmp_path / "twin"
    run_experiment(config, twin, threads=2)
    for name in ("exact.json", "run_s00_r00.json", "aggregate.json", "dos_quantum.csv"):
        assert (twin / "nb1" / "u2" / name).read_bytes() == (
            out / "nb1" / "u2" / name
        ).read_bytes()


def test_mismatched_config_refuses_bundle(bundle):
    out, config, _ = bundle
    with pytest.raises(ConfigError, match="different configuration"):
        run_stage("vqe", with_master_seed(config, 5), out, resume=True)


def test_aggregate_is_recomputable(bundle):
    out, config, _ = bundle
    path = out / "nb1" / "u2" / "aggregate.json"
    before = path.read_bytes()
    stage_aggregate(config, out)
    assert path.read_bytes() == before


def test_average_branches_excludes_flagged_and_short():
    def run_with(branch_entry):
        return {"greens": {"branches": {
            f"{spin}_{branch}": dict(branch_entry)
            for spin in ("up", "down")
            for branch in ("particle", "hole")
        }}}

    clean = {"a": [1.0, 3.0], "b_sq": [0.5], "weight": 0.5, "e0": -2.0, "flags": []}
    other = {"a": [3.0, 5.0], "b_sq": [1.5], "weight": 0.7, "e0": -2.2, "flags": []}
    flagged = {"a": [9.0, 9.0], "b_sq": [9.0], "weight": 0.9, "e0": -9.0,
               "flags": ["ladder_truncated"]}
    short = {"a": [9.0], "b_sq": [], "weight": 0.9, "e0": -9.0, "flags": []}

    runs = [run_with(clean), run_with(other), run_with(flagged), run_with(short)]
    averaged = average_branches(runs, depth=2)
    entry = averaged["up_particle"]
    assert entry["n_averaged"] == 2 and entry["n_excluded"] == 2
    assert entry["a"] == pytest.approx([2.0, 4.0])
    assert entry["b_sq"] == pytest.approx([1.0])
    assert entry["weight"] == pytest.approx(0.6)

    nothing = average_branches([run_with(flagged)], depth=2)
    assert nothing["up_hole"]["n_averaged"] == 0
    assert nothing["up_hole"]["a"] == []


def test_cost_report_rows_and_table(bundle, tmp_path):
    out, _, _ = bundle
    report = report_costs(out)
    assert len(report["rows"]) == 1
    row = report["rows"][0]
    assert row["method"] == "lbfgsb"
    assert row["mode"] == "exact"
    assert row["expected_cost"] == 1
    table = format_cost_table(report)
    assert "lbfgsb" in table

    empty = tmp_path / "nothing"
    empty.mkdir()
    assert "no runs found" in format_cost_table(report_costs(empty))
