export {
  parseTrace,
  TraceFormatError,
  REQUIRED_COLUMNS,
  type Trace,
  type TraceRow,
} from "./trace.js";
export {
  plotTrace,
  METRIC_COLUMNS,
  type MetricName,
  type PlotOptions,
} from "./plot.js";
export { main } from "./cli.js";
