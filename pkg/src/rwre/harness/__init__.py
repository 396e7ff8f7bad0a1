"""Command-line harness: configuration, experiment dispatch and result export."""
