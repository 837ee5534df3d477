/** Dataset manifest shared with the retrieval engine's CLI.
 *
 * For export, each video's `frames` list names its ordered super-image
 * PNGs; relative paths resolve against the manifest's directory.
 */

import * as fs from "node:fs";
import * as path from "node:path";

export interface ManifestVideo {
  videoId: string;
  durationSec: number;
  frames: string[];
}

export interface ManifestQuery {
  queryId: string;
  text: string;
  videoId: string;
  momentSpan: [number, number] | null;
}

export interface Manifest {
  dataset: string;
  videos: ManifestVideo[];
  queries: ManifestQuery[];
}

export class ValidationError extends Error {}

export function loadManifest(manifestPath: string): Manifest {
  const raw = fs.readFileSync(manifestPath, "utf-8");
  let doc: any;
  try {
    doc = JSON.parse(raw);
  } catch (err) {
    throw new ValidationError(`${manifestPath}: invalid JSON: ${err}`);
  }
  const base = path.dirname(path.resolve(manifestPath));

  const videos: ManifestVideo[] = [];
  const videoIds = new Set<string>();
  for (const entry of doc.videos ?? []) {
    const videoId = String(entry.video_id);
    if (videoIds.has(videoId)) {
      throw new ValidationError(`duplicate video id '${videoId}'`);
    }
    videoIds.add(videoId);
    const frames = (entry.frames ?? []).map((f: string) => path.resolve(base, f));
    for (const frame of frames) {
      if (!fs.existsSync(frame)) {
        throw new ValidationError(`${videoId}: frame file ${frame} does not exist`);
      }
    }
    videos.push({
      videoId,
      durationSec: Number(entry.duration_sec ?? 0),
      frames,
    });
  }

  const queries: ManifestQuery[] = [];
  const queryIds = new Set<string>();
  for (const entry of doc.queries ?? []) {
    const queryId = String(entry.query_id);
    if (queryIds.has(queryId)) {
      throw new ValidationError(`duplicate query id '${queryId}'`);
    }
    queryIds.add(queryId);
    queries.push({
      queryId,
      text: String(entry.text ?? ""),
      videoId: String(entry.video_id),
      momentSpan: entry.moment_span ? [Number(entry.moment_span[0]), Number(entry.moment_span[1])] : null,
    });
  }
  return { dataset: String(doc.dataset ?? ""), videos, queries };
}
