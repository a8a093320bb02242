import random

import pytest

from pa_inv import catalog
from pa_inv.numeric import int_matmul, int_transpose
from pa_inv.surface import (
    IdealTriangulation,
    InvalidTriangulation,
    MappingClassWord,
    RelabelingMismatch,
    UnflippableEdge,
    apply_mapping_class,
    epsilon_form,
    find_isometries,
    flip,
    is_isometry,
    kashaev_lattice,
    preserves_form,
    puncture_permutation_by_corners,
    transvection,
    twist_word_homology_action,
)

PRESETS = ["fig8", "t09265", "s254", "9_2_50"]


def preset(name):
    return catalog.load_preset(name)


def test_epsilon_form_once_punctured_torus():
    eps = epsilon_form(preset("fig8").triangulation)
    assert all(eps[i][j] == -eps[j][i] for i in range(3) for j in range(3))
    assert sorted(abs(eps[i][j]) for i in range(3) for j in range(3) if i != j) == [2] * 6


def test_counts():
    t = preset("t09265").triangulation
    assert (t.genus, t.num_punctures, t.num_edges, t.num_faces) == (1, 2, 6, 4)
    f = preset("fig8").triangulation
    assert (f.genus, f.num_punctures, f.num_edges) == (1, 1, 3)


def test_invalid_triangulation():
    with pytest.raises(InvalidTriangulation):
        IdealTriangulation(((0, 1, 2), (~0, ~1, 1)))


def test_json_round_trip():
    for name in PRESETS:
        t = preset(name).triangulation
        assert IdealTriangulation.from_json(t.to_json()) == t
        w = preset(name).word
        assert MappingClassWord.from_json(w.to_json()) == w


def test_relabeling_with_orientation_flags():
    w = MappingClassWord.from_json({"flips": ["~2", "~1"], "relabeling": [
        {"to": 2, "reversed": True}, {"to": 0}, {"to": 1}]})
    assert w.relabeling == (~2, 0, 1)


def _double_flip_returns(tri, label):
    once, frame = flip(tri, label)
    twice, _ = flip(once, frame.e1_new)
    e = frame.edge
    ident = {x: x for x in range(-tri.num_edges, tri.num_edges)}
    rev = dict(ident)
    rev[e], rev[~e] = ~e, e
    return is_isometry(twice, tri, ident) or is_isometry(twice, tri, rev)


def test_flip_involution_random():
    rng = random.Random(0)
    checked = 0
    for name in ("fig8", "t09265"):
        tri = preset(name).triangulation
        for _ in range(60):
            labels = list(range(tri.num_edges)) + [~x for x in range(tri.num_edges)]
            label = rng.choice(labels)
            try:
                ok = _double_flip_returns(tri, label)
            except UnflippableEdge:
                continue
            assert ok
            checked += 1
            tri, _ = flip(tri, label)
    assert checked >= 100


def test_flip_preserves_surface_and_changes_form_by_mutation():
    tri = preset("t09265").triangulation
    new, frame = flip(tri, 0)
    assert (new.genus, new.num_punctures) == (tri.genus, tri.num_punctures)
    eps, eps2 = epsilon_form(tri), epsilon_form(new)
    k = frame.edge
    for i in range(tri.num_edges):
        assert eps2[k][i] == -eps[k][i]


@pytest.mark.parametrize("name", PRESETS)
def test_certificates(name):
    p = preset(name)
    cert = p.certificate()
    assert len(cert.frames) == len(p.word.flips)
    assert cert.puncture_permutation == puncture_permutation_by_corners(cert)


def test_puncture_permutations():
    assert preset("s254").certificate().puncture_permutation == (1, 0)
    assert preset("9_2_50").certificate().puncture_permutation == (0, 1)
    assert preset("t09265").certificate().puncture_permutation == (0, 1)


def test_flip_counts():
    assert len(preset("t09265").word.flips) == 11
    assert len(preset("fig8").word.flips) == 2


def test_bad_relabeling_rejected():
    p = preset("fig8")
    bad = MappingClassWord(p.word.flips, (0, 1, 2))
    with pytest.raises(RelabelingMismatch):
        apply_mapping_class(p.triangulation, bad)


def test_isometries_of_start():
    tri = preset("fig8").triangulation
    isos = find_isometries(tri, tri)
    assert any(all(m[x] == x for x in m) for m in isos)


@pytest.mark.parametrize("name", ["t09265", "s254", "9_2_50", "fig8"])
def test_homology_action_matches_twist_word(name):
    p = preset(name)
    mc = p.raw["mapping_class"]
    form = mc["curve_form"]
    word = [(w["curve"], w["sign"]) for w in mc["twist_word"]]
    h = twist_word_homology_action(word, form)
    if mc.get("twist_suffix"):
        h = int_matmul(h, mc["twist_suffix"])
    assert h == [list(r) for r in p.homology.action]
    assert preserves_form(h, form)


def test_transvection_preserves_form():
    form = [[0, 1, 0], [-1, 0, -1], [0, 1, 0]]
    for c in ([1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0]):
        for s in (1, -1):
            assert preserves_form(transvection(form, c, s), form)
        assert int_matmul(transvection(form, c, 1), transvection(form, c, -1)) == [[1, 0, 0], [0, 1, 0], [0, 0, 1]]


def test_kashaev_lattice_shape():
    for name, rank in (("fig8", 4), ("t09265", 8)):
        lat = kashaev_lattice(preset(name).triangulation)
        assert lat.rank == rank
        assert len(lat.puncture_images) == preset(name).triangulation.num_punctures
        g = [list(r) for r in lat.gram]
        assert g == [[-x for x in r] for r in int_transpose(g)]
