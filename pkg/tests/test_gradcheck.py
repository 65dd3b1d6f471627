from meme.gradcheck import build_cases, run_gradcheck


def test_every_case_passes():
    entries = run_gradcheck()
    failed = [e.name for e in entries if not e.passed]
    assert not failed


def test_cases_cover_losses_and_blocks():
    assert set(build_cases(0)) == {
        "moe_loss", "importance_loss", "load_loss", "tracking_loss", "router_combine",
        "specialized_expert", "shared_expert", "fusion", "prompt",
    }
