import pytest

from matrender import spectra

# acceptance results, filled in as criterion-marked tests finish
_CRITERIA: dict[int, tuple[str, bool, list[str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    n, title = marker.args
    _, ok, details = _CRITERIA.get(n, (title, True, []))
    details = details + [v for k, v in item.user_properties if k == "detail" and v not in details]
    _CRITERIA[n] = (title, ok and rep.passed, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, details = _CRITERIA[n]
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}"
        if details:
            line += "  [" + "; ".join(details) + "]"
        terminalreporter.write_line(line)
from matrender.materials import MaterialSpec


@pytest.fixture(scope="session")
def ior_db():
    db = spectra.load_material_db()
    return {fam: {t.material_id: t for t in tables} for fam, tables in db.items()}


@pytest.fixture(scope="session")
def make_material(ior_db):
    """Build a MaterialSpec for any family with bundled data."""

    def make(family, alpha=0.3, reflectance=0.5, pigment=(0.8, 0.5, 0.2),
             conductor="gold", dielectric="bk7_glass", plastic="acrylic"):
        if family == "diffuse":
            return MaterialSpec("diffuse", diffuse_reflectance=reflectance)
        kw = {}
        if family.startswith("rough"):
            kw["alpha"] = alpha
        if family.endswith("conductor"):
            ior = ior_db["conductor"][conductor]
        elif family.endswith("dielectric"):
            ior = ior_db["dielectric"][dielectric]
        else:
            ior = ior_db["plastic"][plastic]
            kw["pigment_albedo"] = pigment
        return MaterialSpec(family, ior, **kw)

    return make


@pytest.fixture(scope="session")
def assets(tmp_path_factory):
    """Tiny shape and environment-map directories for dataset runs."""
    import numpy as np

    from matrender.geometry import box_mesh, icosphere, save_obj
    from matrender.images import write_hdr

    root = tmp_path_factory.mktemp("assets")
    shapes, envs = root / "shapes", root / "envmaps"
    shapes.mkdir()
    envs.mkdir()
    save_obj(icosphere(2), shapes / "ball.obj")
    save_obj(box_mesh(0.7, 2), shapes / "box.obj")
    rng = np.random.default_rng(0)
    write_hdr(envs / "sky.exr", rng.uniform(0.5, 2.0, size=(8, 16, 3)))
    write_hdr(envs / "studio.hdr", rng.uniform(0.5, 2.0, size=(8, 16, 3)))
    return root
