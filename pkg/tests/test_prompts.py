"""Prompt asset loading and rendering."""

from __future__ import annotations

import logging

import pytest

from opendst.prompts import MissingAsset, PromptAsset, PromptStage, load_assets


class TestPlaceholderEngine:
    def test_declared_and_scanned_must_agree(self):
        with pytest.raises(ValueError):
            PromptAsset(
                name="x",
                stage=PromptStage.SRP_TRACKING,
                model_key=None,
                role="final",
                template="hello {name}",
                placeholders=frozenset(),
            )

    def test_render_fills_every_occurrence(self):
        asset = PromptAsset(
            name="x",
            stage=PromptStage.SRP_TRACKING,
            model_key=None,
            role="final",
            template="{slots} and again {slots}",
            placeholders=frozenset({"slots"}),
        )
        assert asset.render({"slots": "A"}) == "A and again A"

    def test_render_rejects_missing_and_extra_bindings(self):
        asset = PromptAsset(
            name="x",
            stage=PromptStage.SRP_TRACKING,
            model_key=None,
            role="final",
            template="{slots}",
            placeholders=frozenset({"slots"}),
        )
        with pytest.raises(ValueError):
            asset.render({})
        with pytest.raises(ValueError):
            asset.render({"slots": "A", "bogus": "B"})

    def test_literal_json_braces_are_not_placeholders(self):
        template = 'Reply as {\n  slotname: slotvalue\n} filling {slots}'
        asset = PromptAsset(
            name="x",
            stage=PromptStage.SRP_TRACKING,
            model_key=None,
            role="final",
            template=template,
            placeholders=frozenset({"slots"}),
        )
        out = asset.render({"slots": "day, area"})
        assert "{\n  slotname: slotvalue\n}" in out
        assert "day, area" in out


class TestLibrary:
    def test_all_nine_assets_present(self, library):
        names = {a.name for a in library}
        assert names == {
            "domain_classification",
            "entity_extraction",
            "entity_extraction_extended",
            "mcq_answering",
            "srp_gpt-4-turbo",
            "srp_gpt-3.5-turbo",
            "srp_llama-3",
            "seed_domain_classification",
            "seed_srp_tracking",
        }

    def test_unknown_asset_raises(self, library):
        with pytest.raises(MissingAsset):
            library.asset("nope")

    def test_extraction_variants(self, library):
        core = library.entity_extraction(extended=False)
        ext = library.entity_extraction(extended=True)
        assert core.name == "entity_extraction"
        assert ext.name == "entity_extraction_extended"
        assert "-DAY:" in ext.template and "-DAY:" not in core.template

    def test_srp_selects_model_template(self, library):
        assert library.srp("gpt-4-turbo").name == "srp_gpt-4-turbo"
        assert library.srp("gpt-3.5-turbo").name == "srp_gpt-3.5-turbo"
        assert library.srp("llama-3").name == "srp_llama-3"

    def test_srp_unknown_model_falls_back(self, library, caplog):
        with caplog.at_level(logging.WARNING):
            asset = library.srp("some-new-model")
        assert asset.name == "srp_gpt-4-turbo"
        assert any("some-new-model" in r.message for r in caplog.records)

    def test_seed_lookup(self, library):
        assert library.seed(PromptStage.DOMAIN_CLASSIFICATION).role == "seed"
        assert library.seed(PromptStage.SRP_TRACKING).role == "seed"
        with pytest.raises(MissingAsset):
            library.seed(PromptStage.ENTITY_EXTRACTION)

    def test_loading_is_idempotent(self):
        a = load_assets()
        b = load_assets()
        assert {x.name for x in a} == {x.name for x in b}


class TestTemplateShape:
    def test_domain_classification_placeholder(self, library):
        asset = library.domain_classification()
        assert asset.placeholders == frozenset({"domains"})
        out = asset.render({"domains": "hotel, taxi"})
        assert "hotel, taxi" in out and "{domains}" not in out

    def test_mcq_placeholders(self, library):
        asset = library.mcq()
        assert asset.placeholders == frozenset({"dialgoue", "slotname", "turnindex", "slotvalues", "slotkey"})

    def test_gpt35_template_keeps_literal_output_block(self, library):
        asset = library.srp("gpt-3.5-turbo")
        rendered = asset.render({k: "X" for k in asset.placeholders})
        assert "slotname: slotvalue" in rendered
        assert "{" in rendered  # the literal JSON example survives rendering

    def test_srp_templates_double_slot_mention(self, library):
        # gpt-3.5 and llama templates name the slot list twice; both
        # mentions must render
        for key in ("gpt-3.5-turbo", "llama-3"):
            asset = library.srp(key)
            rendered = asset.render({k: "UNIQUEMARK" if k == "slots" else "d" for k in asset.placeholders})
            assert rendered.count("UNIQUEMARK") == 2, key
