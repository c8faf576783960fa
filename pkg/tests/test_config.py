import pytest

from turnlnl.config import SWEEP_KEYS, parse_config
from turnlnl.errors import ConfigError
from turnlnl.noise import CIFAR100_SUPERCLASSES
from turnlnl.optim import AdamWConfig, SgdConfig
from turnlnl.pipeline import TurnConfig


def test_defaults_match_library_defaults():
    cfg = parse_config("")
    spec = cfg.runs()[0]
    assert spec.turn_config() == TurnConfig()
    assert spec.method == "turn" and spec.tuning == "lp+fft"
    assert not cfg.has_noise
    assert spec.noise_spec(0).kind == "none"


def test_sweep_product_and_order():
    cfg = parse_config("[turn]\ntau = 0.3, 0.6, 0.9\n[noise]\nkind = symmetric\nratio = 0.6, 0.9\n")
    runs = cfg.runs()
    assert len(runs) == 6
    assert [(r["noise"]["ratio"], r["turn"]["tau"]) for r in runs[:3]] == [(0.6, 0.3), (0.6, 0.6), (0.6, 0.9)]
    assert len({r.run_id(i) for i, r in enumerate(runs)}) == 6


def test_list_on_non_sweep_key():
    with pytest.raises(ConfigError, match="only allowed on sweep keys"):
        parse_config("[model]\nhidden = 8, 16\n")


def test_every_sweep_key_accepts_lists():
    for section, key in SWEEP_KEYS:
        cfg = parse_config(f"[{section}]\n{key} = 1, 0\n" if key in ("e_lp", "e_fft", "seed")
                           else f"[{section}]\n{key} = 0.1, 0.2\n")
        assert len(cfg.runs()) == 2


@pytest.mark.parametrize("text,needle", [
    ("[data]\ncolour = red\n", "unknown key"),
    ("[extras]\nx = 1\n", "unknown section"),
    ("[noise]\nratio = 1.5\n", "[noise] ratio = 1.5"),
    ("[turn]\ntau = 1.0\n", "[turn] tau"),
    ("[turn]\ntau = 0.3, 0.3\n", "repeated"),
    ("[data]\nclasses = many\n", "[data] classes"),
    ("[optim]\nfft_lr = nan\n", "[optim] fft_lr"),
    ("[run]\nseed = -1\n", "[run] seed"),
    ("[data]\nsource = bundle\n", "path"),
    ("[noise]\nkind = asymmetric\nratio = 0.4\n", "groups"),
    ("[noise]\nkind = asymmetric\ngroups = [[0, 1]]\n", "groups"),
    ("[method]\nname = coteach\n", "[method] name"),
    ("no section header\n", "<string>"),
])
def test_rejections(text, needle):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert needle in str(err.value)


def test_groups_keep_commas():
    cfg = parse_config("[data]\nclasses = 4\n[noise]\nkind = asymmetric\nratio = 0.4\ngroups = [[0,1],[2,3]]\n")
    assert cfg.runs()[0].noise_spec(1).groups == ((0, 1), (2, 3))
    cfg = parse_config("[data]\nclasses = 100\n[noise]\nkind = asymmetric\nratio = 0.4\ngroups = cifar100-super\n")
    assert cfg.runs()[0].noise_spec(1).groups == CIFAR100_SUPERCLASSES


def test_optimizer_mapping():
    cfg = parse_config("[optim]\nlp_kind = adamw\nlp_lr = 0.002\nfft_kind = sgd\nfft_lr = 0.05\n"
                       "momentum = 0.5\nweight_decay = 0.01\nbatch = 64\n")
    tc = cfg.runs()[0].turn_config()
    assert tc.lp_optim == AdamWConfig(lr=0.002, weight_decay=0.01)
    assert tc.fft_optim == SgdConfig(lr=0.05, momentum=0.5, weight_decay=0.01)
    assert tc.batch_size == 64


def test_baseline_mapping():
    cfg = parse_config("[method]\nname = elr\ntuning = lp\nelr_beta = 0.5\nelr_lambda = 1.0\n[run]\nepochs = 7\n")
    spec = cfg.runs()[0]
    bc = spec.baseline_config()
    assert (bc.method, bc.tuning, bc.n_epochs, bc.elr_beta, bc.elr_lambda) == ("elr", "lp", 7, 0.5, 1.0)
    assert spec.run_id(4).startswith("004_elr-lp_clean_")


def test_inline_comments_and_booleans():
    cfg = parse_config("[turn]\nlp_enabled = no  # ablation\ncleansing = once ; reuse\n")
    tc = cfg.runs()[0].turn_config()
    assert tc.lp_enabled is False and tc.cleansing == "once"


def test_with_seeds():
    cfg = parse_config("[run]\nseed = 1, 2\n").with_seeds([9])
    assert [r.seed for r in cfg.runs()] == [9]
    with pytest.raises(ConfigError):
        cfg.with_seeds([2**64])
