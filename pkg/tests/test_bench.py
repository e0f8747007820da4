from pullback_lab.bench import compare_backends, format_rows


def test_compare_backends_small_run():
    rows = compare_backends(members=(1, 4), steps=10, n_modes=8, repeats=1)
    assert {r.members for r in rows} == {1, 4}
    assert all(r.seconds > 0 and r.max_abs_diff <= 1e-12 for r in rows)
    text = format_rows(rows)
    assert text.splitlines()[0].split()[0] == "backend"
    assert len(text.splitlines()) == len(rows) + 1
