#!/usr/bin/env node
/**
 * plots — log-log figures from loopsoup experiment CSVs.
 *
 * Usage:
 *   plots render --csv run/rows.csv --out arm.svg --ref-slope "-3:n^(2-d)"
 *
 * Each kind in the CSV becomes one series; series with at least three
 * positive points get a weighted fit line whose slope is annotated in
 * the legend. --ref-slope adds a dashed guide line and may repeat.
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { parseRefSlope, renderLogLog } from "./figure";

/**
 * Fold "--ref-slope -3:label" into "--ref-slope=-3:label". Slopes are
 * usually negative, and a bare "-3:label" token would otherwise be read
 * as an option group.
 */
export function foldRefSlopes(args: string[]): string[] {
  const out: string[] = [];
  for (let i = 0; i < args.length; i++) {
    if (args[i] === "--ref-slope" && i + 1 < args.length) {
      out.push(`--ref-slope=${args[i + 1]}`);
      i++;
    } else {
      out.push(args[i]);
    }
  }
  return out;
}

function main(): void {
  const argv = yargs(foldRefSlopes(hideBin(process.argv)))
    .scriptName("plots")
    .command("render", "write a log-log SVG from an experiment CSV", (y) =>
      y
        .option("csv", {
          type: "string",
          demandOption: true,
          describe: "input rows.csv (fixed header contract)",
        })
        .option("out", {
          type: "string",
          demandOption: true,
          describe: "output SVG path",
        })
        .option("x", {
          type: "string",
          default: "n",
          describe: "x column",
        })
        .option("y", {
          type: "string",
          default: "value",
          describe: "y column",
        })
        .option("ref-slope", {
          type: "string",
          array: true,
          default: [] as string[],
          describe: 'reference guide line "S:LABEL", repeatable',
        })
        .option("title", { type: "string", describe: "figure title" })
    )
    .demandCommand(1, "expected a command (render)")
    .strict()
    .parseSync();

  if (argv._[0] !== "render") {
    throw new Error(`unknown command ${String(argv._[0])}`);
  }
  const result = renderLogLog({
    csv: argv.csv as string,
    x: argv.x as string,
    y: argv.y as string,
    refSlopes: (argv["ref-slope"] as string[]).map(parseRefSlope),
    out: argv.out as string,
    title: argv.title as string | undefined,
  });
  if (result.excluded > 0) {
    console.error(
      `warning: excluded ${result.excluded} row(s) with nonpositive values`
    );
  }
  for (const [kind, fit] of Object.entries(result.fits)) {
    console.log(
      `${kind}: slope ${fit.slope.toFixed(6)} ± ${fit.slopeSe.toFixed(6)}` +
        ` (${fit.pointsUsed} points)`
    );
  }
  console.log(`SVG → ${argv.out}`);
}

if (require.main === module) {
  try {
    main();
  } catch (err) {
    console.error("Fatal:", err instanceof Error ? err.message : err);
    process.exit(1);
  }
}
