#!/usr/bin/env node
/**
 * saliency-exporter CLI.
 *
 *   saliency-exporter export --model model.json --volume image.nii \
 *       --pois pois.csv --grid P=64,overlap=0.25 --out exports/ \
 *       [--target pre-activation|post-activation] [--no-predictions]
 */

import * as path from "path";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { parseGridSpec } from "./grid";
import { loadModel } from "./models";
import { readNifti } from "./nifti";
import { readPoiCsv, runExport, SaliencyTarget } from "./export";

export function main(argv: string[]): number {
  yargs(argv)
    .command(
      "export",
      "run patch inference and write per-(POI, patch) saliency maps",
      (y) =>
        y
          .option("model", { type: "string", demandOption: true, describe: "model descriptor JSON" })
          .option("volume", { type: "string", demandOption: true, describe: "input volume (.nii)" })
          .option("pois", { type: "string", demandOption: true, describe: "POI table CSV" })
          .option("grid", { type: "string", default: "P=64,overlap=0.25" })
          .option("out", { type: "string", demandOption: true })
          .option("target", {
            choices: ["pre-activation", "post-activation"] as const,
            default: "pre-activation" as SaliencyTarget,
          })
          .option("predictions", { type: "boolean", default: true }),
      (args) => {
        const grid = parseGridSpec(args.grid);
        const volume = readNifti(path.resolve(args.volume));
        const model = loadModel(path.resolve(args.model), [
          grid.patchSize,
          grid.patchSize,
          grid.patchSize,
        ]);
        const pois = readPoiCsv(path.resolve(args.pois));
        const manifest = runExport(
          volume, grid, model, pois, path.resolve(args.out),
          args.target as SaliencyTarget, args.predictions
        );
        console.log(
          `exported ${manifest.exports.length} saliency map(s), ` +
          `${manifest.predictions.length} prediction file(s) -> ${args.out}`
        );
      }
    )
    .demandCommand(1)
    .strict()
    .exitProcess(false)
    .fail((msg, err) => {
      console.error(msg ?? err?.message);
      process.exitCode = 2;
    })
    .parseSync();
  return Number(process.exitCode ?? 0);
}

if (require.main === module) {
  process.exit(main(hideBin(process.argv)));
}
