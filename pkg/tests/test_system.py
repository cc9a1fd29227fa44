import numpy as np
import pytest

from medrek.dataset import SynthConfig, generate_synthetic
from medrek.errors import BadMagicError, TruncatedError, ValidationError
from medrek.lm import CausalLM, LmConfig
from medrek.system import MedrekSystem, SystemConfig
from medrek.training import TrainConfig, train


def make_world():
    return generate_synthetic(
        SynthConfig(
            seed=2,
            n_records=4,
            n_subject_areas=2,
            n_subjects=4,
            n_relations=3,
            n_objects=3,
            n_locality_facts=2,
            valid_fraction=0.0,
        )
    )


def make_system(world, shared_qk=True, seed=0):
    lm = CausalLM(world.vocab, LmConfig(d_lm=32, heads=4), seed=7)
    lm.freeze()
    cfg = SystemConfig(
        seed=seed, d_enc=8, d_rep=16, prompt_tokens=2, prompt_heads=4, prototype_tokens=3, shared_qk=shared_qk
    )
    return MedrekSystem(world.vocab, lm, cfg)


class TestBundle:
    def test_insert_and_retrieve_shapes(self):
        world = make_world()
        system = make_system(world)
        entry = system.insert_record(world.records[0])
        assert entry.key.shape == (16,)
        assert entry.prompt.shape == (2, 32)
        result = system.retrieve(world.records[0].efficacy_q)
        assert result.sims.shape == (1,)
        prompt = system.prompt_for(result)
        assert (prompt is None) == (result.entry is None)

    def test_empty_kb_answers_like_plain_model(self):
        world = make_world()
        system = make_system(world)
        q = world.records[0].efficacy_q
        plain = system.lm.greedy_answer(system.vocab.encode(q), 3, None)
        assert system.answer_tokens(q, 3) == system.vocab.decode(plain)

    def test_trainable_excludes_ablation_key_pair(self):
        world = make_world()
        system = make_system(world, shared_qk=False)
        trainable = set(map(id, system.trainable()))
        assert id(system.encoder.key_w1) not in trainable
        assert id(system.encoder.key_w2) not in trainable
        names = [n for n, _ in system.state_tensors()]
        assert "key_w1" in names and "key_w2" in names

    def test_load_state_shape_mismatch_raises(self):
        world = make_world()
        system = make_system(world)
        arrays = system.state_arrays()
        arrays[0] = arrays[0][:, :-1]
        with pytest.raises(ValidationError, match="shape"):
            system.load_state(arrays)


class TestCheckpoint:
    def test_round_trip_at_stored_precision(self, tmp_path):
        world = make_world()
        system = make_system(world)
        train(system, world.records[:3], [], TrainConfig(epochs=2, batch_size=2, lr=1e-3, seed=0))
        path = tmp_path / "editor.mrec"
        system.save(path)
        loaded = MedrekSystem.load(path, system.lm)
        assert loaded.config == system.config
        assert loaded.vocab.tokens == system.vocab.tokens
        for (name, live), stored in zip(system.state_tensors(), loaded.state_tensors()):
            f32 = live.data.astype(np.float32).astype(np.float64)
            assert np.array_equal(f32, stored[1].data), name
        # Re-saving the loaded system reproduces the file bitwise.
        path2 = tmp_path / "editor2.mrec"
        loaded.save(path2)
        assert path2.read_bytes() == path.read_bytes()

    def test_save_is_deterministic(self, tmp_path):
        world = make_world()
        system = make_system(world)
        p1, p2 = tmp_path / "a.mrec", tmp_path / "b.mrec"
        system.save(p1)
        system.save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_ablated_checkpoint_round_trips_key_pair(self, tmp_path):
        world = make_world()
        system = make_system(world, shared_qk=False)
        path = tmp_path / "ablated.mrec"
        system.save(path)
        loaded = MedrekSystem.load(path, system.lm)
        assert loaded.config.shared_qk is False
        want = system.encoder.key_w1.data.astype(np.float32).astype(np.float64)
        assert np.array_equal(loaded.encoder.key_w1.data, want)

    def test_wrong_lm_is_rejected(self, tmp_path):
        world = make_world()
        system = make_system(world)
        path = tmp_path / "editor.mrec"
        system.save(path)
        other = CausalLM(world.vocab, LmConfig(d_lm=32, heads=4), seed=8)
        other.freeze()
        with pytest.raises(ValidationError, match="different language model"):
            MedrekSystem.load(path, other)

    def test_bad_magic_and_truncation(self, tmp_path):
        world = make_world()
        system = make_system(world)
        path = tmp_path / "editor.mrec"
        system.save(path)
        data = path.read_bytes()
        bad = tmp_path / "bad.mrec"
        bad.write_bytes(b"XXXX" + data[4:])
        with pytest.raises(BadMagicError):
            MedrekSystem.load(bad, system.lm)
        short = tmp_path / "short.mrec"
        short.write_bytes(data[: len(data) // 2])
        with pytest.raises(TruncatedError):
            MedrekSystem.load(short, system.lm)
