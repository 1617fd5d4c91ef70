// Query composer state: image pick, free text, and attribute chips.
// Chips enumerate exactly the attribute vocabulary of the captioning stage
// so operator queries use the same field names as synthesis.

import { ATTRIBUTE_FIELDS, type AttributeField, type AttributeFragment, type QueryParts } from "./types.js";

export const CHIP_FIELDS: readonly AttributeField[] = ATTRIBUTE_FIELDS;

const CHIP_LABELS: Record<AttributeField, string> = {
  gender: "gender",
  age_range: "age range",
  hair: "hair",
  clothing_type: "clothing type",
  clothing_color: "clothing color",
  footwear_type: "footwear type",
  footwear_color: "footwear color",
  posture_gait: "posture or gait",
  patterns_accessories: "patterns or accessories",
  distinguishing_features: "distinguishing features",
};

export interface ComposerState {
  image: string | null;
  text: string;
  attributes: AttributeFragment;
}

export function emptyComposer(): ComposerState {
  return { image: null, text: "", attributes: {} };
}

export function chipLabel(field: AttributeField): string {
  return CHIP_LABELS[field];
}

export function setChip(state: ComposerState, field: AttributeField, value: string): ComposerState {
  const attributes = { ...state.attributes };
  const trimmed = value.trim();
  if (trimmed) {
    attributes[field] = trimmed;
  } else {
    delete attributes[field];
  }
  return { ...state, attributes };
}

export function setImage(state: ComposerState, image: string | null): ComposerState {
  return { ...state, image };
}

export function setText(state: ComposerState, text: string): ComposerState {
  return { ...state, text };
}

export function canSubmit(state: ComposerState): boolean {
  return state.image !== null || state.text.trim().length > 0 || Object.keys(state.attributes).length > 0;
}

export function toQueryParts(state: ComposerState): QueryParts {
  const parts: QueryParts = {};
  if (state.image !== null) parts.image = state.image;
  const text = state.text.trim();
  if (text) parts.text = text;
  if (Object.keys(state.attributes).length > 0) parts.attributes = { ...state.attributes };
  return parts;
}
