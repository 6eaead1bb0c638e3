// Client-side modification rules; must accept nothing the API rejects.

import type { ModificationDraft } from "./types.js";

export const ACTIONS = ["set_smoothness", "scale_emission", "set_reflectance"] as const;
export const KINDS = ["reinforcing", "disruptive"] as const;

export interface FieldError {
  field: string;
  message: string;
}

export function validateDraft(draft: ModificationDraft): FieldError[] {
  const errors: FieldError[] = [];
  if (!draft.target_class) {
    errors.push({ field: "target_class", message: "target class is required" });
  }
  if (!ACTIONS.includes(draft.action)) {
    errors.push({ field: "action", message: `action must be one of ${ACTIONS.join(", ")}` });
  }
  if (!KINDS.includes(draft.kind)) {
    errors.push({ field: "kind", message: `kind must be one of ${KINDS.join(", ")}` });
  }
  if (!Number.isFinite(draft.value)) {
    errors.push({ field: "value", message: "value must be a number" });
  } else if (draft.action.startsWith("set_") && (draft.value < 0 || draft.value > 1)) {
    errors.push({ field: "value", message: "set_* values must lie in [0, 1]" });
  } else if (draft.action === "scale_emission" && draft.value < 0) {
    errors.push({ field: "value", message: "emission scale must be non-negative" });
  }
  if (!draft.new_version_label || draft.new_version_label.includes("_")) {
    errors.push({ field: "new_version_label", message: "version label required, no underscores" });
  }
  const faces = draft.face_indices ?? [];
  if (draft.region_tags.length === 0 && faces.length === 0) {
    errors.push({ field: "region_tags", message: "select at least one region or face" });
  }
  return errors;
}

export function isValidDraft(draft: ModificationDraft): boolean {
  return validateDraft(draft).length === 0;
}
