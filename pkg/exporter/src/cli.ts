#!/usr/bin/env node
/** qemb-export --manifest m.json --backbone clip-b32 --out file.qemb */

import { parseArgs } from "node:util";

import { runExport } from "./export";
import { ValidationError } from "./manifest";
import { knownProfiles } from "./profiles";

function main(): number {
  let args;
  try {
    args = parseArgs({
      options: {
        manifest: { type: "string" },
        backbone: { type: "string" },
        out: { type: "string" },
        batch: { type: "string" },
        device: { type: "string" },
        help: { type: "boolean", short: "h" },
      },
    });
  } catch (err) {
    console.error(`qemb-export: ${(err as Error).message}`);
    return 64;
  }
  const { manifest, backbone, out, batch, device, help } = args.values;
  if (help || !manifest || !backbone || !out) {
    const usage =
      "usage: qemb-export --manifest <json> --backbone <name> --out <qemb> " +
      `[--batch N] [--device hint]\n  backbones: ${knownProfiles().join(", ")}`;
    if (help) {
      console.log(usage);
      return 0;
    }
    console.error(usage);
    return 64;
  }
  try {
    const summary = runExport({
      manifestPath: manifest,
      backbone,
      outPath: out,
      batchSize: batch ? Number(batch) : undefined,
      device,
    });
    console.log(
      `wrote ${out}: ${summary.videos} videos (${summary.rows} rows), ` +
        `${summary.queries} queries, d=${summary.profile.dim} (${summary.profile.name})`
    );
    return 0;
  } catch (err) {
    if (err instanceof ValidationError || err instanceof Error && /unknown backbone/.test(err.message)) {
      console.error(`qemb-export: ${(err as Error).message}`);
      return 1;
    }
    if ((err as NodeJS.ErrnoException).code === "ENOENT") {
      console.error(`qemb-export: ${(err as Error).message}`);
      return 2;
    }
    console.error(`qemb-export: ${(err as Error).message}`);
    return 1;
  }
}

process.exit(main());
