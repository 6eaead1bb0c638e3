import { describe, expect, it } from "vitest";
import { isValidDraft, validateDraft } from "../src/validation.js";
import type { ModificationDraft } from "../src/types.js";

function draft(overrides: Partial<ModificationDraft> = {}): ModificationDraft {
  return {
    target_class: "wedgecar",
    action: "set_smoothness",
    value: 0.1,
    kind: "reinforcing",
    new_version_label: "vR",
    region_tags: ["hull"],
    face_indices: [],
    note: "",
    ...overrides,
  };
}

describe("validateDraft", () => {
  it("accepts a well-formed draft", () => {
    expect(validateDraft(draft())).toEqual([]);
  });

  it("rejects smoothness 1.5 client-side", () => {
    const errors = validateDraft(draft({ value: 1.5 }));
    expect(errors.some((e) => e.field === "value")).toBe(true);
    expect(isValidDraft(draft({ value: 1.5 }))).toBe(false);
  });

  it("rejects negative set values", () => {
    expect(validateDraft(draft({ value: -0.2 }))).toHaveLength(1);
  });

  it("allows emission scale above 1 (clamped server-side)", () => {
    expect(validateDraft(draft({ action: "scale_emission", value: 1.8 }))).toEqual([]);
  });

  it("rejects negative emission scale", () => {
    const errors = validateDraft(draft({ action: "scale_emission", value: -0.5 }));
    expect(errors.some((e) => e.field === "value")).toBe(true);
  });

  it("requires a selector", () => {
    const errors = validateDraft(draft({ region_tags: [], face_indices: [] }));
    expect(errors.some((e) => e.field === "region_tags")).toBe(true);
  });

  it("accepts a face-index selector without region tags", () => {
    expect(validateDraft(draft({ region_tags: [], face_indices: [3, 4] }))).toEqual([]);
  });

  it("rejects underscored version labels", () => {
    const errors = validateDraft(draft({ new_version_label: "v_R" }));
    expect(errors.some((e) => e.field === "new_version_label")).toBe(true);
  });

  it("rejects unknown actions and kinds", () => {
    const errors = validateDraft(
      draft({ action: "paint" as never, kind: "mystery" as never }),
    );
    expect(errors.map((e) => e.field).sort()).toEqual(["action", "kind"]);
  });
});
