/** Backbone profiles the exporter can emit embeddings for. */

export interface EncoderProfile {
  name: string;
  dim: number;
  resolution: number;
}

const PROFILES: Record<string, EncoderProfile> = {
  "clip-b32": { name: "clip-b32", dim: 512, resolution: 224 },
  "clip-l14": { name: "clip-l14", dim: 768, resolution: 224 },
  "clip-l14-336": { name: "clip-l14-336", dim: 768, resolution: 336 },
};

export function getProfile(name: string): EncoderProfile {
  const key = name.toLowerCase().replace(/[^a-z0-9]+/g, "-").replace(/^-|-$/g, "");
  const profile = PROFILES[key];
  if (!profile) {
    throw new Error(`unknown backbone '${name}'; known: ${Object.keys(PROFILES).join(", ")}`);
  }
  return profile;
}

export function knownProfiles(): string[] {
  return Object.keys(PROFILES);
}
