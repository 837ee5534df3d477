/** Orchestration: manifest + PNGs in, one QEMB file out.
 *
 * One video record per manifest video with rows in the manifest's frame
 * order, one query record per manifest query. Embeddings are written raw
 * (unnormalized); the consuming engine normalizes on load.
 */

import * as fs from "node:fs";

import { encodeImage, encodeText } from "./encoder";
import { loadManifest, ValidationError } from "./manifest";
import { EncoderProfile, getProfile } from "./profiles";
import { encodeQemb, QembRecord } from "./qemb";

export interface ExportJob {
  manifestPath: string;
  backbone: string;
  outPath: string;
  batchSize?: number;
  /** advisory only; the built-in encoder is CPU-bound and deterministic */
  device?: string;
}

export interface ExportSummary {
  profile: EncoderProfile;
  videos: number;
  rows: number;
  queries: number;
}

export function runExport(job: ExportJob): ExportSummary {
  const profile = getProfile(job.backbone);
  const manifest = loadManifest(job.manifestPath);
  const batch = Math.max(1, job.batchSize ?? 16);

  const records: QembRecord[] = [];
  let rows = 0;
  for (const video of manifest.videos) {
    if (video.frames.length === 0) {
      throw new ValidationError(`video '${video.videoId}' lists no image files`);
    }
    const encoded: Float32Array[] = [];
    for (let start = 0; start < video.frames.length; start += batch) {
      for (const frame of video.frames.slice(start, start + batch)) {
        const row = encodeImage(fs.readFileSync(frame), profile);
        if (row.length !== profile.dim) {
          throw new ValidationError(
            `video '${video.videoId}': got ${row.length}-d row, profile says ${profile.dim}`
          );
        }
        encoded.push(row);
      }
    }
    rows += encoded.length;
    records.push({ kind: "video", id: video.videoId, rows: encoded });
  }
  for (const query of manifest.queries) {
    records.push({
      kind: "query",
      id: query.queryId,
      targetId: query.videoId,
      span: query.momentSpan,
      vector: encodeText(query.text, profile),
    });
  }

  fs.writeFileSync(job.outPath, encodeQemb(records, profile.dim));
  return { profile, videos: manifest.videos.length, rows, queries: manifest.queries.length };
}
