"""Shipped MATPOWER cases (see MATPOWER-LICENSE)."""
