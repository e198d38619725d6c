import numpy as np
import pytest

from ctxmem import (
    ContextualMemory,
    EmptyInputError,
    InvalidNodeError,
    PCAReducer,
    ValidationError,
    build_tree,
    synthetic_embed,
)
from conftest import insert_text


class AllInOneClusterer:
    """Collapses everything into one cluster: root parents all leaves."""

    def cluster(self, points):
        return [list(range(len(points)))]


class NoMergeClusterer:
    """Refuses every merge; exercises the builder's forced-merge fallback."""

    def cluster(self, points):
        return [[i] for i in range(len(points))]


def make_memory(tag_embeddings: dict) -> ContextualMemory:
    memory = ContextualMemory()
    for i, (name, emb) in enumerate(sorted(tag_embeddings.items())):
        insert_text(memory, [name], emb, seconds=i)
    return memory


def levels_of(tree):
    """Walk the tree root-down and return the node ids per level."""
    levels = [[tree.root]]
    while True:
        nxt = [c for nid in levels[-1] for c in tree.node(nid).children]
        if not nxt:
            break
        levels.append(nxt)
    return levels


def descendant_leaves(tree, node_id) -> frozenset:
    node = tree.node(node_id)
    if node.tag_name is not None:
        return frozenset([node.tag_name])
    out = frozenset()
    for child in node.children:
        out |= descendant_leaves(tree, child)
    return out


def three_class_memory(seed: int, tags_per_class: int = 10, dim: int = 32):
    """Tags drawn tightly around 3 well-separated synthetic class centroids."""
    memory = ContextualMemory()
    classes = {}
    for c in range(3):
        for i in range(tags_per_class):
            name = f"c{c}-t{i:02d}"
            emb = synthetic_embed(seed, c, 0.01, dim, draw=c * tags_per_class + i)
            insert_text(memory, [name], emb, seconds=c * tags_per_class + i)
            classes[name] = c
    return memory, classes


class TestDegenerate:
    def test_single_tag(self, memory):
        insert_text(memory, ["only"], [1.0, 0.0])
        tree = build_tree(memory)
        assert tree.level_sizes == [1]
        assert tree.built_from == 1
        assert tree.is_leaf_parent(tree.root)
        leaf = tree.node(tree.node(tree.root).children[0])
        assert leaf.tag_name == "only"

    def test_two_tags_root_parents_leaves(self, memory):
        insert_text(memory, ["a"], [1.0, 0.0])
        insert_text(memory, ["b"], [0.0, 1.0])
        tree = build_tree(memory)
        assert tree.level_sizes == [1, 2]
        assert tree.is_leaf_parent(tree.root)
        np.testing.assert_allclose(tree.node(tree.root).centroid, [0.5, 0.5])

    def test_empty_memory(self, memory):
        with pytest.raises(EmptyInputError):
            build_tree(memory)


class TestTopChild:
    def test_single_child(self, memory):
        insert_text(memory, ["only"], [1.0, 0.0])
        tree = build_tree(memory)
        child = tree.get_top_child(tree.root, np.array([0.3, -0.4]))
        assert child.tag_name == "only"

    def test_higher_cosine_wins(self):
        memory = make_memory({"x": [1.0, 0.0], "y": [0.0, 1.0]})
        tree = build_tree(memory)
        assert tree.get_top_child(tree.root, np.array([0.9, 0.1])).tag_name == "x"

    def test_tie_goes_to_lower_id(self):
        # same direction, different norms: equal cosine, id order decides
        memory = make_memory({"a": [2.0, 0.0], "b": [1.0, 0.0]})
        tree = build_tree(memory)
        assert tree.get_top_child(tree.root, np.array([1.0, 0.0])).tag_name == "a"

    def test_leaf_input_rejected(self, memory):
        insert_text(memory, ["only"], [1.0, 0.0])
        tree = build_tree(memory)
        leaf = tree.node(tree.node(tree.root).children[0])
        with pytest.raises(InvalidNodeError):
            tree.get_top_child(leaf, np.array([1.0, 0.0]))


class TestChildrenTopk:
    def _tree(self):
        memory = make_memory(
            {
                "ta": [1.0, 0.0],
                "tb": [0.0, 1.0],
                "tc": [1.0, 1.0],
                "td": [-1.0, 0.0],
                "te": [4.0, 3.0],
            }
        )
        return build_tree(memory, clusterer=AllInOneClusterer())

    def test_hand_computed_top3(self):
        # q=(3,4): cos(ta)=0.6 cos(tb)=0.8 cos(tc)=7/(5*sqrt(2)) cos(td)=-0.6 cos(te)=24/25
        tree = self._tree()
        got = tree.get_children_topk(tree.root, np.array([3.0, 4.0]), 3)
        assert got == ["tc", "te", "tb"]

    def test_topk_larger_than_children(self):
        tree = self._tree()
        got = tree.get_children_topk(tree.root, np.array([3.0, 4.0]), 99)
        assert got == ["tc", "te", "tb", "ta", "td"]

    def test_topk_one(self):
        tree = self._tree()
        assert tree.get_children_topk(tree.root, np.array([3.0, 4.0]), 1) == ["tc"]

    def test_non_leaf_parent_rejected(self):
        memory, _ = three_class_memory(seed=0)
        tree = build_tree(memory)
        with pytest.raises(InvalidNodeError):
            tree.get_children_topk(tree.root, np.zeros(32), 2)
        leaf = tree.leaves()[0]
        with pytest.raises(InvalidNodeError):
            tree.get_children_topk(leaf, np.zeros(32), 2)

    def test_name_breaks_score_ties(self):
        memory = make_memory({"zz": [1.0, 0.0], "aa": [2.0, 0.0], "mm": [0.0, 1.0]})
        tree = build_tree(memory, clusterer=AllInOneClusterer())
        got = tree.get_children_topk(tree.root, np.array([1.0, 0.0]), 3)
        assert got == ["aa", "zz", "mm"]


class TestIsLeafParent:
    def test_single_tag_root(self, memory):
        insert_text(memory, ["only"], [1.0, 0.0])
        tree = build_tree(memory)
        assert tree.is_leaf_parent(tree.root) is True

    def test_multi_level_root(self):
        memory, _ = three_class_memory(seed=1)
        tree = build_tree(memory)
        assert tree.is_leaf_parent(tree.root) is False

    def test_leaf_is_not_leaf_parent(self, memory):
        insert_text(memory, ["only"], [1.0, 0.0])
        tree = build_tree(memory)
        leaf = tree.node(tree.node(tree.root).children[0])
        assert tree.is_leaf_parent(leaf) is False


class TestStructure:
    @pytest.mark.parametrize("seed", range(3))
    def test_three_class_recovery(self, seed):
        memory, classes = three_class_memory(seed)
        tree = build_tree(memory)
        levels = levels_of(tree)
        by_class = {
            c: frozenset(n for n, cls in classes.items() if cls == c) for c in range(3)
        }

        # some level is exactly the 3 generative classes
        class_levels = [
            lvl
            for lvl in levels
            if len(lvl) == 3
            and {descendant_leaves(tree, nid) for nid in lvl} == set(by_class.values())
        ]
        assert class_levels, f"no level recovers the 3 classes: {tree.level_sizes}"

        # and every node below the class level stays class-pure
        first_internal = levels[-2]
        for nid in first_internal:
            leaves = descendant_leaves(tree, nid)
            assert len({classes[name] for name in leaves}) == 1

    def test_partition_property(self):
        memory, classes = three_class_memory(seed=2)
        tree = build_tree(memory)
        for node in tree.nodes.values():
            if not node.children:
                continue
            child_sets = [descendant_leaves(tree, c) for c in node.children]
            union = frozenset().union(*child_sets)
            assert union == descendant_leaves(tree, node.id)
            assert sum(len(s) for s in child_sets) == len(union)
        assert descendant_leaves(tree, tree.root) == frozenset(classes)

    def test_centroid_consistency(self):
        memory, _ = three_class_memory(seed=3)
        tree = build_tree(memory)
        leaf_centroids = {leaf.tag_name: leaf.centroid for leaf in tree.leaves()}
        for node in tree.nodes.values():
            if not node.children:
                continue
            members = descendant_leaves(tree, node.id)
            oracle = np.mean(np.stack([leaf_centroids[m] for m in sorted(members)]), axis=0)
            np.testing.assert_allclose(node.centroid, oracle, atol=1e-6, rtol=0)

    def test_leaf_centroids_are_tag_means(self):
        memory, _ = three_class_memory(seed=4)
        tree = build_tree(memory)
        for leaf in tree.leaves():
            np.testing.assert_allclose(
                leaf.centroid, memory.get_tag(leaf.tag_name).mean_embedding, atol=0
            )

    def test_build_determinism(self):
        memory, _ = three_class_memory(seed=5)
        a = build_tree(memory)
        b = build_tree(memory)
        assert a.to_json() == b.to_json()
        assert a.level_sizes == b.level_sizes

    def test_monotone_level_sizes(self):
        for n_tags, dim in [(1, 4), (2, 4), (7, 8), (23, 8)]:
            memory = ContextualMemory()
            rng = np.random.default_rng(n_tags)
            for i in range(n_tags):
                insert_text(memory, [f"t{i:03d}"], rng.standard_normal(dim), seconds=i)
            tree = build_tree(memory)
            sizes = tree.level_sizes
            assert sizes[0] == 1 and sizes[-1] == n_tags
            assert all(a < b for a, b in zip(sizes, sizes[1:]))
            assert sizes == [len(lvl) for lvl in levels_of(tree)] or n_tags == 1

    def test_forced_merge_reaches_single_root(self):
        memory = make_memory(
            {f"t{i}": np.eye(4)[i % 4] * (1 + i) for i in range(4)}
        )
        tree = build_tree(memory, clusterer=NoMergeClusterer())
        assert tree.level_sizes == [1, 2, 3, 4]
        assert tree.is_leaf_parent(tree.root) is False

    def test_bad_partition_rejected(self):
        class Broken:
            def cluster(self, points):
                return [[0]]

        memory, _ = three_class_memory(seed=6, tags_per_class=2)
        with pytest.raises(ValidationError):
            build_tree(memory, clusterer=Broken())

    def test_dump_round_trip(self, tmp_path):
        import json

        memory, _ = three_class_memory(seed=7, tags_per_class=3)
        tree = build_tree(memory)
        path = tmp_path / "tree.json"
        tree.dump(path)
        doc = json.loads(path.read_text())
        assert doc["built_from"] == 9
        assert doc["level_sizes"] == tree.level_sizes
        roots = [n for n in doc["nodes"] if n["parent"] is None]
        assert len(roots) == 1 and roots[0]["id"] == tree.root
        leaves = [n for n in doc["nodes"] if n["tag_name"] is not None]
        assert sorted(n["tag_name"] for n in leaves) == memory.tag_names()


class TestPCAReducer:
    def test_deterministic(self):
        rng = np.random.default_rng(0)
        data = [rng.standard_normal(10) for _ in range(8)]
        a = PCAReducer().reduce(data, 3)
        b = PCAReducer().reduce(data, 3)
        for va, vb in zip(a, b):
            np.testing.assert_array_equal(va, vb)

    def test_output_dim_exact_even_when_rank_deficient(self):
        data = [np.array([1.0, 0.0]), np.array([2.0, 0.0]), np.array([3.0, 0.0])]
        out = PCAReducer().reduce(data, 5)
        assert all(v.shape == (5,) for v in out)

    def test_preserves_pairwise_distances_at_full_rank(self):
        rng = np.random.default_rng(1)
        data = [rng.standard_normal(6) for _ in range(5)]
        out = PCAReducer().reduce(data, 6)
        for i in range(5):
            for j in range(5):
                assert np.linalg.norm(data[i] - data[j]) == pytest.approx(
                    np.linalg.norm(out[i] - out[j]), abs=1e-9
                )

    def test_bad_target_dim(self):
        with pytest.raises(ValidationError):
            PCAReducer().reduce([np.ones(3)], 0)
