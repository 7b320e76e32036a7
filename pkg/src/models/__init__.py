"""Data models package"""