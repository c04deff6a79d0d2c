import torch

ACCEPTANCE = {
    "test_criterion_1_sampling": "1 sampling oracle",
    "test_criterion_2_diffusion": "2 diffusion oracle",
    "test_criterion_3_gradients": "3 gradient integrity",
    "test_criterion_4_identity_stop_gradient": "4 identity and stop-gradient contracts",
    "test_criterion_5_metrics": "5 metrics oracles",
    "test_criterion_6_desk_denoising": "6 desk-scale denoising smoke test",
    "test_criterion_7_reproducibility": "7 reproducibility",
}

_outcomes = {}
_setup = {}


def pytest_configure(config):
    # single-threaded kernels: required for bit-exact training, and faster for the tiny tensors here
    torch.set_num_threads(1)


def pytest_runtest_logreport(report):
    name = report.nodeid.split("::")[-1]
    if name not in ACCEPTANCE:
        return
    if report.when == "setup":
        _setup[name] = report.duration  # shared fixtures (the training runs) land here
    if report.when == "call" or report.outcome != "passed":
        note = "; ".join(f"{k}={v}" for k, v in report.user_properties)
        secs = report.duration + (_setup.get(name, 0.0) if report.when != "setup" else 0.0)
        _outcomes[name] = (report.outcome, secs, note)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name, label in ACCEPTANCE.items():
        if name in _outcomes:
            outcome, secs, note = _outcomes[name]
            verdict = "PASS" if outcome == "passed" else "FAIL"
            line = f"{verdict}  criterion {label}  ({secs:.1f}s)"
            terminalreporter.write_line(line + (f"  [{note}]" if note else ""))
